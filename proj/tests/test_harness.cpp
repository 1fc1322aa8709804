#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "fdn/checkpoint.hpp"
#include "fdn/config.hpp"
#include "fdn/suite.hpp"
#include "fdn/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace fdn {
namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fdn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Short schedule on a small dataset; the graph and loop are unchanged.
ExperimentConfig quick(ModelKind kind, TaskKind task = TaskKind::sine) {
  ExperimentConfig c;
  c.model = ModelSpec::preset(kind);
  c.task = TaskSpec::preset(task);
  c.task.n_train = 64;
  c.task.n_test_id = 40;
  c.task.n_test_ood = 40;
  c.epochs = 6;
  c.batch_size = 16;
  c.k_val = 10;
  c.k_test = 10;
  c.beta.warmup_updates = 10;
  return c;
}

// ---------------------------------------------------------------- config

TEST(Config, EmptyFileYieldsTableDefaults) {
  const ExperimentConfig c = parse_config("{}");
  EXPECT_EQ(c.epochs, 400);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.k_train, 1u);
  EXPECT_EQ(c.k_val, 100u);
  EXPECT_EQ(c.k_test, 100u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7, 8, 9}));
  EXPECT_EQ(c.beta.beta_max, 0.01);
  EXPECT_EQ(c.beta.warmup_updates, 200);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config(R"({"epoch": 3})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"model": {"kind": "ic_fdn", "width": 3}})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"epochs": 0})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"model": "resnet"})"), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = quick(ModelKind::lp_fdn, TaskKind::step);
  c.objective = Objective::iwae;
  const ExperimentConfig back = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(run_hash(back, 7), run_hash(c, 7));
}

TEST(Config, HashIgnoresKeyOrderSeedsAndOutputDir) {
  const std::string a = R"({"epochs": 50, "lr": 0.002, "model": {"kind": "bayes", "rho_init": -4},
                            "seeds": [1], "output_dir": "x"})";
  const std::string b = R"({"output_dir": "y", "seeds": [2, 3],
                            "model": {"rho_init": -4, "kind": "bayes"}, "lr": 0.002, "epochs": 50})";
  const auto ca = parse_config(a), cb = parse_config(b);
  EXPECT_EQ(run_hash(ca, 7), run_hash(cb, 7));
  EXPECT_NE(run_hash(ca, 7), run_hash(ca, 8));
  EXPECT_NE(run_hash(ca, 7), run_hash(parse_config(R"({"epochs": 51})"), 7));
  EXPECT_EQ(run_hash(ca, 7).size(), 16u);
}

TEST(Config, SuiteExpandsToFiftyFourRuns) {
  const SuiteConfig s = parse_suite_config("{}");
  const auto runs = expand(s);
  EXPECT_EQ(runs.size(), 54u);
  EXPECT_EQ(runs[0].config.model.kind, runs[8].config.model.kind);
  EXPECT_NE(runs[0].config.model.kind, runs[9].config.model.kind);
  EXPECT_EQ(runs[0].seed, 7u);
  EXPECT_EQ(runs[2].seed, 9u);
  std::set<std::string> hashes;
  for (const auto& r : runs) hashes.insert(r.hash);
  EXPECT_EQ(hashes.size(), 54u);
  EXPECT_TRUE(expand(parse_suite_config(R"({"models": []})")).empty());
}

// ---------------------------------------------------------------- checkpoint

class CheckpointRoundTrip : public ::testing::TestWithParam<ModelKind> {};

TEST_P(CheckpointRoundTrip, BitExact) {
  ModelSpec spec = ModelSpec::preset(GetParam());
  Rng init(3);
  auto m = make_model(spec, init);
  if (auto* e = dynamic_cast<EnsembleModel*>(m.get())) {
    for (std::size_t k = 0; k < e->members(); k += 2) e->mark_trained(k);
  }
  const fs::path dir = scratch("ckpt_" + to_string(GetParam()));
  save_checkpoint(dir / "a.bin", *m, R"({"note": 1})");
  LoadedCheckpoint back = load_checkpoint(dir / "a.bin");
  EXPECT_EQ(back.model->params(), m->params());
  EXPECT_EQ(back.model->spec().kind, spec.kind);
  EXPECT_EQ(nlohmann::json::parse(back.extra_json)["note"], 1);
  if (auto* e = dynamic_cast<EnsembleModel*>(m.get())) {
    EXPECT_EQ(dynamic_cast<EnsembleModel&>(*back.model).trained_flags(), e->trained_flags());
  }
  save_checkpoint(dir / "b.bin", *back.model, R"({"note": 1})");
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  fs::remove_all(dir);
}

INSTANTIATE_TEST_SUITE_P(AllModels, CheckpointRoundTrip,
                         ::testing::Values(ModelKind::mlp_dropout, ModelKind::deep_ensemble,
                                           ModelKind::bayes, ModelKind::gauss_hyper,
                                           ModelKind::ic_fdn, ModelKind::lp_fdn,
                                           ModelKind::det_hyper),
                         [](const auto& info) { return to_string(info.param); });

TEST(Checkpoint, RejectsCorruptFiles) {
  const fs::path dir = scratch("ckpt_bad");
  Rng init(1);
  auto m = make_model(ModelSpec::preset(ModelKind::ic_fdn), init);
  save_checkpoint(dir / "ok.bin", *m);
  const std::string bytes = slurp(dir / "ok.bin");
  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(write("magic.bin", bad_magic)), std::runtime_error);
  std::string bad_version = bytes;
  bad_version[8] = 99;
  EXPECT_THROW(load_checkpoint(write("version.bin", bad_version)), std::runtime_error);
  EXPECT_THROW(load_checkpoint(write("short.bin", bytes.substr(0, bytes.size() - 5))),
               std::runtime_error);
  EXPECT_THROW(load_checkpoint(write("long.bin", bytes + "x")), std::runtime_error);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), std::runtime_error);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------- training

TEST(Train, IdenticalSeedsGiveBitIdenticalRuns) {
  for (auto kind : {ModelKind::ic_fdn, ModelKind::mlp_dropout, ModelKind::deep_ensemble}) {
    ExperimentConfig c = quick(kind);
    if (kind == ModelKind::deep_ensemble) c.epochs = 20;
    const TrainedRun a = train(c, 7);
    const TrainedRun b = train(c, 7);
    EXPECT_EQ(a.record.loss_trace, b.record.loss_trace);
    EXPECT_EQ(a.record.val_trace, b.record.val_trace);
    EXPECT_EQ(report_to_json(a.record.report), report_to_json(b.record.report));
    EXPECT_EQ(a.model->params(), b.model->params());
    const TrainedRun other = train(c, 8);
    EXPECT_NE(a.record.loss_trace, other.record.loss_trace);
  }
}

TEST(Train, RestoredModelHasMinimumValidationError) {
  for (auto kind : {ModelKind::bayes, ModelKind::lp_fdn, ModelKind::deep_ensemble}) {
    ExperimentConfig c = quick(kind);
    if (kind == ModelKind::deep_ensemble) c.epochs = 30;
    const TrainedRun r = train(c, 9);
    const auto& v = r.record.val_trace;
    const auto best = std::min_element(v.begin(), v.end());
    EXPECT_EQ(static_cast<long>(best - v.begin()), r.record.best_epoch);
    EXPECT_EQ(validation_mse(*r.model, r.data, c.k_val, run_stream(9, "val")), *best);
  }
}

TEST(Train, BetaTraceFollowsSchedule) {
  const ExperimentConfig c = quick(ModelKind::ic_fdn);
  const TrainedRun r = train(c, 7);
  ASSERT_EQ(r.record.beta_trace.size(), static_cast<std::size_t>(r.record.updates));
  for (std::size_t t = 0; t < r.record.beta_trace.size(); ++t) {
    EXPECT_EQ(r.record.beta_trace[t], prob::beta_at(static_cast<long>(t), c.beta));
    EXPECT_LE(r.record.beta_trace[t], c.beta.beta_max);
  }
  EXPECT_EQ(r.record.beta_trace.back(), c.beta.beta_max);
}

TEST(Train, UpdateCountsMatchAcrossModels) {
  ExperimentConfig single = quick(ModelKind::ic_fdn);
  single.epochs = 20;
  ExperimentConfig ens = single;
  ens.model = ModelSpec::preset(ModelKind::deep_ensemble);
  const long per_epoch = 64 / 16;
  const TrainedRun a = train(single, 7);
  const TrainedRun b = train(ens, 7);
  EXPECT_EQ(a.record.updates, 20 * per_epoch);
  EXPECT_LE(std::abs(a.record.updates - b.record.updates), per_epoch);
  EXPECT_EQ(b.record.val_trace.size(), 2u);
}

TEST(Train, DefaultScheduleUpdateBudget) {
  // 256 points in batches of 64 over 400 epochs; ensembles run 40 rounds of 10 members.
  const ExperimentConfig c;
  const long per_epoch = static_cast<long>((c.task.n_train + c.batch_size - 1) / c.batch_size);
  EXPECT_EQ(per_epoch * c.epochs, 1600);
  ExperimentConfig e = c;
  e.model = ModelSpec::preset(ModelKind::deep_ensemble);
  EXPECT_EQ(per_epoch * e.member_epochs() * e.model.ensemble_size, 1600);
}

TEST(Train, BudgetViolationStopsBeforeTraining) {
  ExperimentConfig c = quick(ModelKind::ic_fdn);
  c.model.d_hid = 60;
  EXPECT_THROW(train(c, 7), BudgetError);
}

TEST(Train, NonFiniteLossRaisesDivergence) {
  ExperimentConfig c = quick(ModelKind::mlp_dropout);
  c.task.amplitude = 1e300;
  try {
    train(c, 7);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch(), 0);
    EXPECT_EQ(e.step(), 1);
  }
}

// ---------------------------------------------------------------- suite and report

std::vector<RunSpec> tiny_suite() {
  SuiteConfig s;
  s.base = quick(ModelKind::ic_fdn);
  s.base.epochs = 3;
  s.base.seeds = {7, 8};
  s.models = {ModelSpec::preset(ModelKind::ic_fdn), ModelSpec::preset(ModelKind::mlp_dropout)};
  s.tasks = {TaskSpec::preset(TaskKind::step)};
  for (auto& t : s.tasks) {
    t.n_train = 32;
    t.n_test_id = 20;
    t.n_test_ood = 20;
  }
  return expand(s);
}

TEST(Suite, RunsThenSkipsCompletedRuns) {
  const fs::path out = scratch("suite");
  const auto runs = tiny_suite();
  ASSERT_EQ(runs.size(), 4u);
  const SuiteResult first = run_suite(runs, {out, 2, {}});
  EXPECT_EQ(first.failures(), 0u);
  for (const auto& st : first.statuses) EXPECT_EQ(st.status, "done");
  const std::string metrics = slurp(run_dir(out, runs[0].hash) / "metrics.json");
  const SuiteResult second = run_suite(runs, {out, 1, {}});
  for (const auto& st : second.statuses) EXPECT_EQ(st.status, "cached");
  EXPECT_EQ(slurp(run_dir(out, runs[0].hash) / "metrics.json"), metrics);
  EXPECT_EQ(second.records[1].loss_trace, first.records[1].loss_trace);
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["runs"].size(), 4u);

  const auto loaded = load_runs(out);
  ASSERT_EQ(loaded.size(), 4u);
  const auto files = write_report(loaded, out / "report");
  EXPECT_EQ(files.size(), 6u);
  const std::string csv = slurp(out / "report" / "step.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "model,rho,b,a,aurc,d_var,d_mse,d_crps,n_seeds,"
            "rho_std,b_std,a_std,aurc_std,d_var_std,d_mse_std,d_crps_std");
  EXPECT_NE(slurp(out / "report" / "step_scatter.svg").find("stroke-dasharray"), std::string::npos);
  fs::remove_all(out);
}

TEST(Suite, EmptyListGivesEmptyManifest) {
  const fs::path out = scratch("suite_empty");
  const SuiteResult r = run_suite({}, {out, 1, {}});
  EXPECT_TRUE(r.statuses.empty());
  EXPECT_TRUE(nlohmann::json::parse(slurp(out / "manifest.json"))["runs"].empty());
  fs::remove_all(out);
}

TEST(Suite, FailedRunIsRecordedAndOthersContinue) {
  const fs::path out = scratch("suite_fail");
  auto runs = tiny_suite();
  runs.resize(2);
  runs[0].config.model.d_hid = 80;
  runs[0].hash = run_hash(runs[0].config, runs[0].seed);
  const SuiteResult r = run_suite(runs, {out, 1, {}});
  EXPECT_EQ(r.failures(), 1u);
  EXPECT_EQ(r.statuses[0].status, "failed");
  EXPECT_NE(r.statuses[0].error.find(std::to_string(count_params(runs[0].config.model))),
            std::string::npos);
  EXPECT_EQ(r.statuses[1].status, "done");
  EXPECT_FALSE(run_complete(run_dir(out, runs[0].hash)));
  fs::remove_all(out);
}

TEST(Report, PerfectModelRowHasAbsentCells) {
  RunArtifacts run;
  run.record.model = ModelKind::det_hyper;
  run.record.task = TaskKind::sine;
  for (int i = 0; i < 4; ++i) {
    run.points.push_back({static_cast<double>(i), 0.0, 0.0, 0.2,
                          i < 2 ? Split::test_id : Split::test_ood});
  }
  run.record.report = summarize(run.points);
  const auto rows = aggregate({run}, TaskKind::sine);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].rho);
  EXPECT_FALSE(rows[0].b);
  EXPECT_FALSE(rows[0].a);
  EXPECT_EQ(*rows[0].aurc, 0.0);
  EXPECT_EQ(*rows[0].d_var, 0.0);
  const std::string csv = report_csv(rows);
  EXPECT_NE(csv.find("\nHyperNet,,,,0,0,0,0,1,"), std::string::npos) << csv;
}

TEST(Report, CellsAreSeedMeans) {
  std::vector<RunArtifacts> runs(3);
  const double rhos[] = {0.2, 0.5, 0.8};
  for (int i = 0; i < 3; ++i) {
    runs[i].record.model = ModelKind::bayes;
    runs[i].record.task = TaskKind::step;
    runs[i].record.report.rho = rhos[i];
    runs[i].record.report.d_mse = i;
  }
  const auto rows = aggregate(runs, TaskKind::step);
  EXPECT_EQ(rows[0].n, 3u);
  EXPECT_NEAR(*rows[0].rho, 0.5, 1e-15);
  EXPECT_NEAR(*rows[0].rho_std, 0.3, 1e-15);
  EXPECT_NEAR(*rows[0].d_mse, 1.0, 1e-15);
}

// ---------------------------------------------------------------- command line

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome cli(const std::string& args) {
  const std::string cmd = std::string(FDN_CLI) + " " + args + " 2>&1";
  Outcome o;
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) o.out.append(buf.data(), n);
  const int status = pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("eval").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, BudgetViolationExitsNonzeroWithCount) {
  const fs::path dir = scratch("cli_budget");
  std::ofstream(dir / "cfg.json") << R"({"model": {"kind": "ic_fdn", "d_hid": 50}, "epochs": 1})";
  const Outcome o = cli("run --config " + (dir / "cfg.json").string() + " --out " + (dir / "out").string());
  EXPECT_NE(o.code, 0);
  ModelSpec s = ModelSpec::preset(ModelKind::ic_fdn);
  s.d_hid = 50;
  EXPECT_NE(o.out.find(std::to_string(count_params(s))), std::string::npos) << o.out;
  fs::remove_all(dir);
}

TEST(Cli, RunThenEvalPrintsReport) {
  const fs::path dir = scratch("cli_eval");
  std::ofstream(dir / "cfg.json") << config_to_json(quick(ModelKind::ic_fdn, TaskKind::quadratic));
  const Outcome run = cli("run --config " + (dir / "cfg.json").string() + " --seed 7 --out " +
                          (dir / "out").string());
  ASSERT_EQ(run.code, 0) << run.out;
  const auto runs = load_runs(dir / "out");
  ASSERT_EQ(runs.size(), 1u);
  const Outcome ev = cli("eval --checkpoint " + runs[0].record.checkpoint.string() +
                         " --task sine --k-test 5");
  ASSERT_EQ(ev.code, 0) << ev.out;
  const MetricsReport rep = report_from_json(ev.out);
  EXPECT_EQ(rep.id.n + rep.ood.n, 400u);
  const Outcome rpt = cli("report --out " + (dir / "out").string());
  EXPECT_EQ(rpt.code, 0) << rpt.out;
  EXPECT_TRUE(fs::exists(dir / "out" / "report" / "quadratic.csv"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fdn
