#include <cstdio>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fdn/checkpoint.hpp"
#include "fdn/config.hpp"
#include "fdn/metrics.hpp"
#include "fdn/suite.hpp"
#include "fdn/train.hpp"

namespace fs = std::filesystem;

namespace {

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, std::optional<fs::path> out) {
  fdn::ExperimentConfig cfg = config.empty() ? fdn::ExperimentConfig{} : fdn::load_config(config);
  if (out) cfg.output_dir = *out;
  if (seed) cfg.seeds = {*seed};
  // Refuse budget-violating specs before creating anything on disk.
  fdn::require_budget(cfg.model);
  int failures = 0;
  for (std::uint64_t s : cfg.seeds) {
    fdn::RunSpec run{cfg, s, fdn::run_hash(cfg, s)};
    try {
      fdn::RunRecord rec = fdn::execute_run(run, cfg.output_dir);
      std::cout << "{\"hash\": \"" << rec.hash << "\", \"seed\": " << s
                << ", \"metrics\": " << fdn::report_to_json(rec.report, -1) << "}" << std::endl;
    } catch (const fdn::TrainingDiverged& e) {
      log_line(std::string("error: ") + e.what());
      ++failures;
    }
  }
  return failures == 0 ? 0 : 1;
}

int cmd_report(const fs::path& out) {
  const auto runs = fdn::load_runs(out);
  if (runs.empty()) {
    log_line("error: no completed runs under " + out.string());
    return 1;
  }
  for (const auto& p : fdn::write_report(runs, out / "report")) std::cout << p.string() << "\n";
  return 0;
}

int cmd_suite(const std::string& config, std::optional<std::uint64_t> seed,
              std::optional<fs::path> out, std::size_t jobs) {
  fdn::SuiteConfig suite = config.empty() ? fdn::parse_suite_config("{}")
                                          : fdn::load_suite_config(config);
  if (seed) suite.base.seeds = {*seed};
  if (out) suite.base.output_dir = *out;
  const auto runs = fdn::expand(suite);
  fdn::SuiteOptions opts{suite.base.output_dir, jobs, log_line};
  const auto result = fdn::run_suite(runs, opts);
  log_line(std::to_string(runs.size()) + " runs, " + std::to_string(result.failures()) +
           " failed; manifest at " + (opts.out / "manifest.json").string());
  if (!runs.empty() && result.failures() < runs.size()) {
    fdn::write_report(fdn::load_runs(opts.out), opts.out / "report");
  }
  return result.failures() == 0 ? 0 : 1;
}

int cmd_eval(const fs::path& checkpoint, const std::string& task, const std::string& config,
             std::optional<std::uint64_t> seed, std::optional<std::size_t> k_test) {
  auto ckpt = fdn::load_checkpoint(checkpoint);
  fdn::ExperimentConfig cfg = config.empty() ? fdn::ExperimentConfig{} : fdn::load_config(config);
  if (!task.empty()) cfg.task = fdn::TaskSpec::preset(fdn::parse_task_kind(task));
  if (k_test) cfg.k_test = *k_test;
  const std::uint64_t s = seed.value_or(cfg.seeds.empty() ? 0 : cfg.seeds.front());
  fdn::Rng data = fdn::run_stream(s, "data");
  const fdn::Dataset ds = fdn::make_dataset(cfg.task, data);
  fdn::Rng noise = fdn::run_stream(s, "test");
  const auto ev = fdn::evaluate_model(*ckpt.model, ds, cfg.k_test, noise);
  std::cout << fdn::report_to_json(ev.report) << std::endl;
  return 0;
}

int cmd_gradcheck(const std::string& config, std::uint64_t seed) {
  fdn::ExperimentConfig base = config.empty() ? fdn::ExperimentConfig{} : fdn::load_config(config);
  bool ok = true;
  std::printf("%-16s %-10s %14s  %s\n", "model", "objective", "max_rel_err", "result");
  for (int k = 0; k <= static_cast<int>(fdn::ModelKind::det_hyper); ++k) {
    for (fdn::Objective obj : {fdn::Objective::beta_elbo, fdn::Objective::iwae}) {
      fdn::ExperimentConfig cfg = base;
      cfg.model = fdn::ModelSpec::preset(static_cast<fdn::ModelKind>(k));
      cfg.model.heteroscedastic = cfg.likelihood == fdn::Likelihood::heteroscedastic;
      cfg.objective = obj;
      const auto rep = fdn::model_grad_check(cfg, seed);
      ok = ok && rep.passed;
      std::printf("%-16s %-10s %14.3e  %s\n", fdn::display_name(cfg.model.kind).c_str(),
                  fdn::to_string(obj).c_str(), rep.max_rel_error, rep.passed ? "pass" : "FAIL");
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees many mid-sized tensors per step; keep freed
  // memory in the heap instead of returning it to the kernel each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Input-conditioned weight-distribution networks: training and evaluation"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::size_t jobs = 1;
  std::string checkpoint, task;
  std::optional<std::size_t> k_test;

  auto* run = app.add_subcommand("run", "train one config (every seed unless --seed)");
  run->add_option("--config", config, "config file (JSON)")->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "single seed override");
  run->add_option("--out", out, "output directory");

  auto* suite = app.add_subcommand("suite", "run the model x task x seed matrix and report");
  suite->add_option("--config", config, "suite config file (JSON)")->check(CLI::ExistingFile);
  suite->add_option("--seed", seed, "single seed override");
  suite->add_option("--out", out, "output directory");
  suite->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "re-score a checkpoint, MetricsReport JSON on stdout");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--task", task, "step, sine or quadratic");
  eval->add_option("--config", config, "config supplying the task and K_test")->check(CLI::ExistingFile);
  eval->add_option("--seed", seed, "seed for data and sampling noise");
  eval->add_option("--k-test", k_test, "mixture components per test point");

  auto* report = app.add_subcommand("report", "tables and figures from completed runs");
  report->add_option("--out", out, "output directory holding the runs");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every model objective");
  gradcheck->add_option("--config", config, "config supplying likelihood settings")->check(CLI::ExistingFile);
  gradcheck->add_option("--seed", seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*run) return cmd_run(config, seed, out);
    if (*suite) return cmd_suite(config, seed, out, jobs);
    if (*eval) return cmd_eval(checkpoint, task, config, seed, k_test);
    if (*report) return cmd_report(out.value_or("out"));
    if (*gradcheck) return cmd_gradcheck(config, seed.value_or(0));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}
