#include <benchmark/benchmark.h>

#include "fdn/config.hpp"
#include "fdn/metrics.hpp"
#include "fdn/models.hpp"
#include "fdn/train.hpp"

namespace {

using namespace fdn;

// One training step's forward and backward pass on a batch of 64.
void BM_TrainStep(benchmark::State& state) {
  const auto kind = static_cast<ModelKind>(state.range(0));
  ExperimentConfig cfg;
  cfg.model = ModelSpec::preset(kind);
  Rng init(1);
  auto model = make_model(cfg.model, init);
  Rng data(2);
  Tensor x(64, 1), y(64, 1);
  for (std::size_t i = 0; i < 64; ++i) {
    x[i] = data.uniform(-2, 2);
    y[i] = target_fn(TaskKind::sine, x[i]);
  }
  auto* ens = dynamic_cast<EnsembleModel*>(model.get());
  Rng noise(3);
  for (auto _ : state) {
    ad::Tape tape;
    ForwardOutput fo = ens ? ens->member_forward(tape, 0, x) : model->forward(tape, x, 1, noise);
    auto grads = tape.backward(objective_from_forward(tape, fo, y, cfg, 0.01));
    benchmark::DoNotOptimize(grads);
  }
  state.SetLabel(display_name(kind));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, static_cast<int>(ModelKind::lp_fdn))->Unit(benchmark::kMicrosecond);

// Inference over 200 inputs with K = 100.
void BM_Predict(benchmark::State& state) {
  const auto kind = static_cast<ModelKind>(state.range(0));
  Rng init(1);
  auto model = make_model(ModelSpec::preset(kind), init);
  if (auto* e = dynamic_cast<EnsembleModel*>(model.get())) {
    for (std::size_t m = 0; m < e->members(); ++m) e->mark_trained(m);
  }
  std::vector<double> xs(200);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = -2.0 + 0.02 * static_cast<double>(i);
  Rng noise(2);
  for (auto _ : state) benchmark::DoNotOptimize(model->predict(xs, 100, noise));
  state.SetLabel(display_name(kind));
}
BENCHMARK(BM_Predict)->DenseRange(0, static_cast<int>(ModelKind::lp_fdn))->Unit(benchmark::kMillisecond);

void BM_CrpsMixture(benchmark::State& state) {
  Rng r(1);
  PredictiveMixture mix;
  for (int k = 0; k < state.range(0); ++k) {
    mix.means.push_back(r.uniform(-1, 1));
    mix.variances.push_back(1.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(crps_mixture(mix, 0.3));
}
BENCHMARK(BM_CrpsMixture)->Arg(10)->Arg(100);

void BM_NormalDraws(benchmark::State& state) {
  Rng r(1);
  for (auto _ : state) benchmark::DoNotOptimize(r.normal(64, 100));
  state.SetItemsProcessed(state.iterations() * 6400);
}
BENCHMARK(BM_NormalDraws);

void BM_Aurc(benchmark::State& state) {
  Rng r(1);
  std::vector<PointEval> pts(400);
  for (auto& p : pts) {
    p.squared_error = r.uniform(0, 1);
    p.variance = r.uniform(0, 1);
  }
  for (auto _ : state) benchmark::DoNotOptimize(aurc(pts));
}
BENCHMARK(BM_Aurc);

}  // namespace

BENCHMARK_MAIN();
