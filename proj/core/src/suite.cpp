#include "fdn/suite.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "fdn/checkpoint.hpp"
#include "fdn/svg.hpp"
#include "json_io.hpp"

namespace fdn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json record_json(const RunRecord& r) {
  return {{"hash", r.hash},
          {"seed", r.seed},
          {"model", to_string(r.model)},
          {"task", to_string(r.task)},
          {"param_count", r.param_count},
          {"best_epoch", r.best_epoch},
          {"updates", r.updates},
          {"val_trace", r.val_trace},
          {"loss_trace", r.loss_trace},
          {"beta_trace", r.beta_trace}};
}

}  // namespace

fs::path run_dir(const fs::path& out, const std::string& hash) { return out / hash; }

bool run_complete(const fs::path& dir) {
  return fs::exists(dir / "metrics.json") && fs::exists(dir / "points.csv") &&
         fs::exists(dir / "ckpt.bin") && fs::exists(dir / "config.json");
}

RunRecord execute_run(const RunSpec& run, const fs::path& out) {
  const fs::path dir = run_dir(out, run.hash);
  fs::create_directories(dir);
  ExperimentConfig cfg = run.config;
  cfg.seeds = {run.seed};
  cfg.output_dir = out;
  write_text(dir / "config.json", config_to_json(cfg) + "\n");

  TrainedRun tr = train(run.config, run.seed);
  tr.record.checkpoint = dir / "ckpt.bin";
  json extra = {{"task", detail::to_json(run.config.task)}, {"seed", run.seed}};
  save_checkpoint(tr.record.checkpoint, *tr.model, extra.dump());
  write_points_csv(tr.evaluation.points, dir / "points.csv");

  json metrics = json::parse(report_to_json(tr.record.report));
  metrics["run"] = record_json(tr.record);
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  return tr.record;
}

RunArtifacts load_run(const fs::path& dir) {
  const json j = json::parse(read_text(dir / "metrics.json"));
  RunArtifacts a;
  a.record.report = report_from_json(j.dump());
  const json& r = j.at("run");
  a.record.hash = r.at("hash").get<std::string>();
  a.record.seed = r.at("seed").get<std::uint64_t>();
  a.record.model = parse_model_kind(r.at("model").get<std::string>());
  a.record.task = parse_task_kind(r.at("task").get<std::string>());
  a.record.param_count = r.at("param_count").get<std::size_t>();
  a.record.best_epoch = r.at("best_epoch").get<int>();
  a.record.updates = r.at("updates").get<long>();
  a.record.val_trace = r.at("val_trace").get<std::vector<double>>();
  a.record.loss_trace = r.at("loss_trace").get<std::vector<double>>();
  a.record.beta_trace = r.at("beta_trace").get<std::vector<double>>();
  a.record.checkpoint = dir / "ckpt.bin";
  a.points = read_points_csv(dir / "points.csv");
  return a;
}

std::vector<RunArtifacts> load_runs(const fs::path& out) {
  std::vector<fs::path> dirs;
  if (fs::is_directory(out)) {
    for (const auto& e : fs::directory_iterator(out)) {
      if (e.is_directory() && run_complete(e.path())) dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunArtifacts> runs;
  for (const auto& d : dirs) runs.push_back(load_run(d));
  return runs;
}

std::size_t SuiteResult::failures() const {
  return static_cast<std::size_t>(std::count_if(
      statuses.begin(), statuses.end(), [](const RunStatus& s) { return s.status == "failed"; }));
}

SuiteResult run_suite(const std::vector<RunSpec>& runs, const SuiteOptions& opts) {
  fs::create_directories(opts.out);
  std::vector<RunStatus> statuses(runs.size());
  std::vector<std::optional<RunRecord>> records(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto log = [&](const std::string& msg) {
    if (!opts.log) return;
    std::lock_guard lock(log_mu);
    opts.log(msg);
  };

  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      const RunSpec& run = runs[i];
      RunStatus& st = statuses[i];
      st.hash = run.hash;
      st.model = run.config.model.kind;
      st.task = run.config.task.kind;
      st.seed = run.seed;
      const std::string tag = to_string(st.model) + "/" + to_string(st.task) + "/seed " +
                              std::to_string(run.seed) + " [" + run.hash + "]";
      const fs::path dir = run_dir(opts.out, run.hash);
      try {
        if (run_complete(dir)) {
          records[i] = load_run(dir).record;
          st.status = "cached";
          log("cached " + tag);
          continue;
        }
        records[i] = execute_run(run, opts.out);
        st.status = "done";
        log("done   " + tag);
      } catch (const std::exception& e) {
        st.status = "failed";
        st.error = e.what();
        log("failed " + tag + ": " + e.what());
      }
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, std::max<std::size_t>(1, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  SuiteResult result;
  json manifest = {{"runs", json::array()}};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& st = statuses[i];
    json entry = {{"hash", st.hash},          {"model", to_string(st.model)},
                  {"task", to_string(st.task)}, {"seed", st.seed},
                  {"status", st.status}};
    if (!st.error.empty()) entry["error"] = st.error;
    manifest["runs"].push_back(entry);
    if (records[i]) result.records.push_back(std::move(*records[i]));
  }
  write_text(opts.out / "manifest.json", manifest.dump(2) + "\n");
  result.statuses = std::move(statuses);
  return result;
}

namespace {

struct Stat {
  std::optional<double> mean, std;
};

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double q = 0.0;
  for (double x : v) q += (x - m) * (x - m);
  s.mean = m;
  s.std = v.size() > 1 ? std::sqrt(q / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

std::vector<ModelKind> model_order(const std::vector<RunArtifacts>& runs, TaskKind task) {
  std::vector<ModelKind> order;
  std::vector<ModelKind> all = benchmark_models();
  all.push_back(ModelKind::det_hyper);
  for (ModelKind k : all) {
    for (const auto& r : runs) {
      if (r.record.task == task && r.record.model == k) {
        order.push_back(k);
        break;
      }
    }
  }
  return order;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream o;
  o.precision(10);
  o << *v;
  return o.str();
}

}  // namespace

std::vector<ReportRow> aggregate(const std::vector<RunArtifacts>& runs, TaskKind task) {
  std::vector<ReportRow> rows;
  for (ModelKind k : model_order(runs, task)) {
    std::vector<double> rho, b, a, aurc, dv, dm, dc;
    ReportRow row;
    row.model = k;
    for (const auto& r : runs) {
      if (r.record.task != task || r.record.model != k) continue;
      const auto& m = r.record.report;
      ++row.n;
      if (m.rho) rho.push_back(*m.rho);
      if (m.b) b.push_back(*m.b);
      if (m.a) a.push_back(*m.a);
      aurc.push_back(m.aurc);
      dv.push_back(m.d_var);
      dm.push_back(m.d_mse);
      dc.push_back(m.d_crps);
    }
    auto set = [](const std::vector<double>& v, std::optional<double>& mean, std::optional<double>& sd) {
      Stat s = stat_of(v);
      mean = s.mean;
      sd = s.std;
    };
    set(rho, row.rho, row.rho_std);
    set(b, row.b, row.b_std);
    set(a, row.a, row.a_std);
    set(aurc, row.aurc, row.aurc_std);
    set(dv, row.d_var, row.d_var_std);
    set(dm, row.d_mse, row.d_mse_std);
    set(dc, row.d_crps, row.d_crps_std);
    rows.push_back(row);
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream o;
  o << "model,rho,b,a,aurc,d_var,d_mse,d_crps,n_seeds,"
       "rho_std,b_std,a_std,aurc_std,d_var_std,d_mse_std,d_crps_std\n";
  for (const auto& r : rows) {
    o << display_name(r.model) << ',' << cell(r.rho) << ',' << cell(r.b) << ',' << cell(r.a) << ','
      << cell(r.aurc) << ',' << cell(r.d_var) << ',' << cell(r.d_mse) << ',' << cell(r.d_crps)
      << ',' << r.n << ',' << cell(r.rho_std) << ',' << cell(r.b_std) << ',' << cell(r.a_std)
      << ',' << cell(r.aurc_std) << ',' << cell(r.d_var_std) << ',' << cell(r.d_mse_std) << ','
      << cell(r.d_crps_std) << '\n';
  }
  return o.str();
}

std::vector<fs::path> write_report(const std::vector<RunArtifacts>& runs, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  };
  for (TaskKind task : {TaskKind::step, TaskKind::sine, TaskKind::quadratic}) {
    const auto order = model_order(runs, task);
    if (order.empty()) continue;
    const std::string t = to_string(task);
    const auto rows = aggregate(runs, task);
    emit(t + ".csv", report_csv(rows));

    std::vector<svg::Series> rc, pooled, id, ood;
    for (ModelKind k : order) {
      svg::Series curve{display_name(k), {}, {}, false};
      svg::Series sp{display_name(k), {}, {}, true}, si = sp, so = sp;
      std::size_t seeds = 0;
      for (const auto& r : runs) {
        if (r.record.task != task || r.record.model != k) continue;
        const RiskCoverage c = risk_coverage(r.points);
        if (curve.x.empty()) {
          curve.x = c.coverage;
          curve.y.assign(c.risk.size(), 0.0);
        }
        if (c.risk.size() == curve.y.size()) {
          for (std::size_t i = 0; i < c.risk.size(); ++i) curve.y[i] += c.risk[i];
          ++seeds;
        }
        for (const auto& p : r.points) {
          sp.x.push_back(p.variance);
          sp.y.push_back(p.squared_error);
          auto& dst = p.split == Split::test_id ? si : so;
          dst.x.push_back(p.variance);
          dst.y.push_back(p.squared_error);
        }
      }
      for (double& v : curve.y) v /= static_cast<double>(std::max<std::size_t>(seeds, 1));
      rc.push_back(std::move(curve));
      pooled.push_back(std::move(sp));
      id.push_back(std::move(si));
      ood.push_back(std::move(so));
    }
    emit(t + "_rc.svg", svg::plot({t + ": risk vs coverage", "coverage", "selective MSE"}, rc));
    const svg::Axes scatter{"", "predicted variance", "squared error", true, true};
    auto titled = [&](std::string title) {
      svg::Axes a = scatter;
      a.title = std::move(title);
      return a;
    };
    emit(t + "_scatter.svg", svg::plot(titled(t + ": MSE vs Var (ID + OOD)"), pooled, true));
    emit(t + "_scatter_id.svg", svg::plot(titled(t + ": MSE vs Var (ID)"), id, true));
    emit(t + "_scatter_ood.svg", svg::plot(titled(t + ": MSE vs Var (OOD)"), ood, true));

    std::vector<std::string> names;
    svg::BarPanel dm{"dMSE", {}}, dv{"dVar", {}}, dc{"dCRPS", {}};
    for (const auto& r : rows) {
      names.push_back(display_name(r.model));
      dm.values.push_back(r.d_mse.value_or(NAN));
      dv.values.push_back(r.d_var.value_or(NAN));
      dc.values.push_back(r.d_crps.value_or(NAN));
    }
    emit("deltas_" + t + ".svg", svg::bar_panels(t + ": OOD minus ID", names, {dm, dv, dc}));
  }
  return written;
}

}  // namespace fdn
