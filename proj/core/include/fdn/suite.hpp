#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdn/config.hpp"
#include "fdn/metrics.hpp"
#include "fdn/train.hpp"

namespace fdn {

// Run directory layout: <out>/<hash>/{config.json, ckpt.bin, points.csv, metrics.json}.
// metrics.json is written last, so its presence marks a completed run.
std::filesystem::path run_dir(const std::filesystem::path& out, const std::string& hash);
bool run_complete(const std::filesystem::path& dir);

// Trains and persists one run.
RunRecord execute_run(const RunSpec& run, const std::filesystem::path& out);

struct RunArtifacts {
  RunRecord record;
  std::vector<PointEval> points;
};

RunArtifacts load_run(const std::filesystem::path& dir);
// Every completed run directory directly under `out`, ordered by hash.
std::vector<RunArtifacts> load_runs(const std::filesystem::path& out);

struct RunStatus {
  std::string hash;
  ModelKind model = ModelKind::ic_fdn;
  TaskKind task = TaskKind::sine;
  std::uint64_t seed = 0;
  std::string status;  // "done", "cached" or "failed"
  std::string error;
};

struct SuiteOptions {
  std::filesystem::path out = "out";
  std::size_t jobs = 1;
  std::function<void(const std::string&)> log;
};

struct SuiteResult {
  std::vector<RunRecord> records;  // successful runs, in input order
  std::vector<RunStatus> statuses;
  std::size_t failures() const;
};

// Runs every spec on a pool of `jobs` workers, skipping completed run
// directories. Failures are recorded and do not stop the suite. Writes
// <out>/manifest.json.
SuiteResult run_suite(const std::vector<RunSpec>& runs, const SuiteOptions& opts);

// Seed-averaged table row for one (model, task).
struct ReportRow {
  ModelKind model = ModelKind::ic_fdn;
  std::size_t n = 0;
  std::optional<double> rho, b, a, aurc, d_var, d_mse, d_crps;
  std::optional<double> rho_std, b_std, a_std, aurc_std, d_var_std, d_mse_std, d_crps_std;
};

std::vector<ReportRow> aggregate(const std::vector<RunArtifacts>& runs, TaskKind task);
std::string report_csv(const std::vector<ReportRow>& rows);

// Writes <dir>/{<task>.csv, <task>_rc.svg, <task>_scatter.svg,
// <task>_scatter_id.svg, <task>_scatter_ood.svg, deltas_<task>.svg} for each
// task present. Returns the files written.
std::vector<std::filesystem::path> write_report(const std::vector<RunArtifacts>& runs,
                                                const std::filesystem::path& dir);

}  // namespace fdn
