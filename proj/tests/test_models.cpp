#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fdn/config.hpp"
#include "fdn/models.hpp"
#include "fdn/prob.hpp"
#include "fdn/train.hpp"
#include "support/oracles.hpp"

namespace fdn {
namespace {

std::unique_ptr<Model> build(const ModelSpec& spec, std::uint64_t seed = 1) {
  Rng init(seed);
  return make_model(spec, init);
}

FdnModel& as_fdn(Model& m) { return dynamic_cast<FdnModel&>(m); }

std::vector<double> column_values(const ad::Var& v) {
  return {v.value().data().begin(), v.value().data().end()};
}

TEST(Budget, CountsReproduceTheModelTable) {
  EXPECT_EQ(count_params(ModelSpec::preset(ModelKind::mlp_dropout)), 1000u);
  EXPECT_EQ(count_params(ModelSpec::preset(ModelKind::bayes)), 998u);
  EXPECT_EQ(count_params(ModelSpec::preset(ModelKind::ic_fdn)), 1004u);
  EXPECT_EQ(count_params(ModelSpec::preset(ModelKind::lp_fdn)), 1011u);
  EXPECT_EQ(count_params(ModelSpec::preset(ModelKind::deep_ensemble)), 1930u);
}

TEST(Budget, IcNetworkDerivation) {
  // x -> 6 -> (2 * 46) plus x -> 6 -> (2 * 24)
  const std::size_t layer1 = (1 * 6 + 6) + (6 * 92 + 92);
  const std::size_t layer2 = (1 * 6 + 6) + (6 * 48 + 48);
  EXPECT_EQ(layer1 + layer2, 1004u);
  EXPECT_EQ(layer1, 656u);
}

TEST(Budget, PlainMlpIsThreeHPlusOne) {
  for (int h : {1, 7, 50, 333}) {
    ModelSpec s = ModelSpec::preset(ModelKind::mlp_dropout);
    s.d_hid = h;
    EXPECT_EQ(count_params(s), static_cast<std::size_t>(3 * h + 1));
  }
}

TEST(Budget, GaussianHypernetWithinTolerance) {
  ModelSpec s = ModelSpec::preset(ModelKind::gauss_hyper);
  EXPECT_TRUE(check_budget(s).within);
  EXPECT_EQ(s.d_h, 9);
  EXPECT_EQ(s.d_hyper, 5);
}

TEST(Budget, CountMatchesBuiltParameterStore) {
  for (auto kind : {ModelKind::mlp_dropout, ModelKind::deep_ensemble, ModelKind::bayes,
                    ModelKind::gauss_hyper, ModelKind::ic_fdn, ModelKind::lp_fdn,
                    ModelKind::det_hyper}) {
    for (bool het : {false, true}) {
      ModelSpec s = ModelSpec::preset(kind);
      s.heteroscedastic = het;
      EXPECT_EQ(build(s)->params().count(), count_params(s)) << to_string(kind) << het;
    }
  }
}

TEST(Budget, ViolationNamesTheCount) {
  ModelSpec s = ModelSpec::preset(ModelKind::ic_fdn);
  s.d_hid = 40;
  try {
    require_budget(s);
    FAIL() << "expected BudgetError";
  } catch (const BudgetError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(count_params(s))), std::string::npos);
    EXPECT_FALSE(e.verdict().within);
  }
  s.enforce_budget = false;
  EXPECT_NO_THROW(require_budget(s));
}

TEST(Posterior, SigmaFloorAndSoftplus) {
  ad::Tape t(false);
  EXPECT_NEAR(posterior_sigma(t.constant(Tensor::scalar(-20.0))).value().item(), 1e-3, 1e-8);
  EXPECT_NEAR(posterior_sigma(t.constant(Tensor::scalar(0.0))).value().item(),
              1e-3 + std::log(2.0), 1e-15);
  EXPECT_NEAR(posterior_sigma(t.constant(Tensor::scalar(0.0))).value().item(), 0.6941, 1e-4);
}

TEST(Posterior, ZeroHypernetworkGivesZeroMeans) {
  auto m = build(ModelSpec::preset(ModelKind::ic_fdn));
  for (auto& [name, t] : m->params()) t.fill(0.0);
  for (int layer : {1, 2}) {
    const double x[] = {0.7};
    LayerPosterior p = as_fdn(*m).hypernet_forward(x, layer);
    for (double v : p.mu_w.data()) EXPECT_EQ(v, 0.0);
    for (double v : p.mu_b.data()) EXPECT_EQ(v, 0.0);
    for (double v : p.sigma_w.data()) EXPECT_NEAR(v, 1e-3 + std::log(2.0), 1e-15);
  }
}

TEST(Posterior, SigmaNeverBelowFloor) {
  for (auto kind : {ModelKind::ic_fdn, ModelKind::lp_fdn}) {
    auto m = build(ModelSpec::preset(kind));
    for (auto& [name, t] : m->params()) {
      if (name.find(".b2") != std::string::npos) t.fill(-200.0);
    }
    auto& f = as_fdn(*m);
    const double x[] = {1.3};
    const LayerPosterior p = f.hypernet_forward(x, 1);
    EXPECT_NO_THROW(p.validate());
    for (double v : p.sigma_w.data()) EXPECT_GE(v, prob::kSigmaFloor);
  }
}

TEST(Posterior, HypernetSignalDimensionChecked) {
  auto m = build(ModelSpec::preset(ModelKind::lp_fdn));
  const double x[] = {0.5};
  EXPECT_THROW(as_fdn(*m).hypernet_forward(x, 2), std::invalid_argument);
  std::vector<double> a(24, 0.1);
  EXPECT_NO_THROW(as_fdn(*m).hypernet_forward(a, 2));
}

LayerPosterior scalar_posterior(double mu, double sigma) {
  return {Tensor::scalar(mu), Tensor::scalar(sigma), Tensor::scalar(-mu), Tensor::scalar(sigma)};
}

TEST(Sampling, FloorSigmaStaysNearMean) {
  Rng r(2);
  const LayerPosterior p = scalar_posterior(0.4, 1e-3);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) worst = std::max(worst, std::abs(sample_layer(p, r).w.item() - 0.4));
  EXPECT_LT(worst, 6e-3);
}

TEST(Sampling, DeviationLinearInSigma) {
  ad::Tape t(false);
  const Tensor z = Tensor::row({0.3, -1.2, 2.0});
  auto mu = t.constant(Tensor::row({1.0, 2.0, 3.0}));
  auto w1 = reparameterize(mu, t.constant(Tensor(1, 3, 0.1)), z).value();
  auto w2 = reparameterize(mu, t.constant(Tensor(1, 3, 0.2)), z).value();
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(w2[j] - (j + 1.0), 2.0 * (w1[j] - (j + 1.0)), 1e-14);
  }
}

TEST(Sampling, MomentsWithinThreeStandardErrors) {
  Rng r(3);
  const double mu = -0.8, sigma = 0.35;
  const LayerPosterior p = scalar_posterior(mu, sigma);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = sample_layer(p, r).w.item();
    s += w;
    s2 += w * w;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_LT(std::abs(mean - mu), 3.0 * sigma / std::sqrt(n));
  // Var of the sample variance of a Gaussian: 2 sigma^4 / (n - 1).
  EXPECT_LT(std::abs(var - sigma * sigma), 3.0 * std::sqrt(2.0 / (n - 1)) * sigma * sigma);
}

TEST(Moments, ReferenceValues) {
  PredictiveMoments a = predictive_moments({{0.7, 0.7, 0.7}, {0.3, 0.3, 0.3}});
  EXPECT_DOUBLE_EQ(a.mean, 0.7);
  EXPECT_NEAR(a.var_epistemic, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(a.var_total, 0.3);
  PredictiveMoments b = predictive_moments({{0.0, 2.0}, {1.0, 1.0}});
  EXPECT_DOUBLE_EQ(b.mean, 1.0);
  EXPECT_DOUBLE_EQ(b.var_epistemic, 1.0);
  EXPECT_DOUBLE_EQ(b.var_total, 2.0);
  EXPECT_THROW(predictive_moments({{}, {}}), std::invalid_argument);
  EXPECT_THROW(predictive_moments({{1.0}, {0.0}}), std::invalid_argument);
}

TEST(Moments, TotalVarianceMatchesMixtureDraws) {
  Rng r(4);
  PredictiveMixture mix;
  for (int k = 0; k < 100; ++k) {
    mix.means.push_back(r.uniform(-3, 3));
    mix.variances.push_back(r.uniform(0.05, 2.0));
  }
  const double mc = oracle::mixture_sample_variance(mix, 1000000, r);
  EXPECT_NEAR(predictive_moments(mix).var_total / mc, 1.0, 0.02);
}

TEST(Dropout, ZeroRateGivesIdenticalPaths) {
  ModelSpec s = ModelSpec::preset(ModelKind::mlp_dropout);
  s.dropout_p = 0.0;
  auto m = build(s);
  Rng noise(5);
  Prediction p = m->predict(0.3, 10, noise);
  for (double v : p.mixture.means) EXPECT_EQ(v, p.mixture.means[0]);
  EXPECT_EQ(p.kl, 0.0);
}

TEST(Dropout, PositiveRateGivesSpread) {
  auto m = build(ModelSpec::preset(ModelKind::mlp_dropout));
  Rng noise(5);
  EXPECT_GT(predictive_moments(m->predict(0.3, 20, noise).mixture).var_epistemic, 0.0);
}

TEST(Ensemble, SingleMemberHasZeroVariance) {
  ModelSpec s = ModelSpec::preset(ModelKind::deep_ensemble);
  s.ensemble_size = 1;
  auto m = build(s);
  dynamic_cast<EnsembleModel&>(*m).mark_trained(0);
  Rng noise(1);
  EXPECT_EQ(predictive_moments(m->predict(0.5, 100, noise).mixture).var_epistemic, 0.0);
}

TEST(Ensemble, TwoPointMixture) {
  ModelSpec s = ModelSpec::preset(ModelKind::deep_ensemble);
  s.ensemble_size = 2;
  auto m = build(s);
  auto& e = dynamic_cast<EnsembleModel&>(*m);
  for (std::size_t k = 0; k < 2; ++k) {
    m->params().at(e.member_prefix(k) + "W2").fill(0.0);
    m->params().at(e.member_prefix(k) + "b2").fill(2.0 * static_cast<double>(k));
  }
  Rng noise(1);
  EXPECT_THROW(m->predict(0.1, 2, noise), std::logic_error);
  e.mark_trained(0);
  e.mark_trained(1);
  PredictiveMoments mo = predictive_moments(m->predict(0.1, 2, noise).mixture);
  EXPECT_DOUBLE_EQ(mo.mean, 1.0);
  EXPECT_DOUBLE_EQ(mo.var_epistemic, 1.0);
}

TEST(Ensemble, EpochSplit) {
  ExperimentConfig cfg;
  cfg.model = ModelSpec::preset(ModelKind::deep_ensemble);
  EXPECT_EQ(cfg.epochs, 400);
  EXPECT_EQ(cfg.member_epochs(), 40);
}

TEST(Bayes, FloorSigmaIsNearlyDeterministic) {
  auto m = build(ModelSpec::preset(ModelKind::bayes));
  for (auto& [name, t] : m->params()) {
    if (name.ends_with(".rho")) t.fill(-20.0);
  }
  Rng noise(2);
  PredictiveMixture mix = m->predict(0.5, 50, noise).mixture;
  const auto [lo, hi] = std::minmax_element(mix.means.begin(), mix.means.end());
  EXPECT_LT(*hi - *lo, 0.05);
  EXPECT_GT(m->predict(0.5, 5, noise).kl, 0.0);
}

TEST(Kl, ZeroForModelsWithoutWeightPosterior) {
  for (auto kind : {ModelKind::mlp_dropout, ModelKind::det_hyper}) {
    auto m = build(ModelSpec::preset(kind));
    Rng noise(1);
    ad::Tape t(false);
    ForwardOutput fo = m->forward(t, Tensor::column({0.1, -1.0}), 3, noise);
    EXPECT_FALSE(fo.has_kl);
    for (double v : fo.kl.value().data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Kl, InputConditionedKlIsDeterministicInX) {
  auto m = build(ModelSpec::preset(ModelKind::ic_fdn));
  const Tensor x = Tensor::column({0.4, -1.1});
  std::vector<std::vector<double>> kls;
  for (std::uint64_t s : {1, 2, 3}) {
    Rng noise(s);
    ad::Tape t(false);
    kls.push_back(column_values(m->forward(t, x, 4, noise).kl));
  }
  EXPECT_EQ(kls[0], kls[1]);
  EXPECT_EQ(kls[0], kls[2]);
  EXPECT_NE(kls[0][0], kls[0][1]);
}

TEST(Kl, LayerPropagatedKlVariesWithNoise) {
  auto m = build(ModelSpec::preset(ModelKind::lp_fdn));
  const Tensor x = Tensor::column({0.4});
  std::vector<double> v;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    Rng noise(s);
    ad::Tape t(false);
    v.push_back(m->forward(t, x, 1, noise).kl.value().item());
  }
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double var = 0.0;
  for (double k : v) var += (k - mean) * (k - mean);
  EXPECT_GT(var / v.size(), 0.0);
}

TEST(Kl, LayerPropagatedMatchesHandComputation) {
  ModelSpec s = ModelSpec::preset(ModelKind::lp_fdn);
  s.d_hid = 2;
  s.d_hyper = 3;
  s.enforce_budget = false;
  s.rho_init = -1.0;
  auto m = build(s, 9);
  auto& f = as_fdn(*m);
  const double x = 0.8;
  const std::size_t k_paths = 4;
  Rng noise(17);
  Rng replay = noise;
  ad::Tape t(false);
  const double kl_model = m->forward(t, Tensor::column({x}), k_paths, noise).kl.value().item();

  // Same draw order as the forward pass: W1, b1, W2, b2 for all paths.
  const Tensor z_w1 = replay.normal(k_paths, 2);
  const Tensor z_b1 = replay.normal(k_paths, 2);
  const double xs[] = {x};
  const LayerPosterior p1 = f.hypernet_forward(xs, 1);
  const double kl1 = prob::kl_diag_gaussian({p1.mu_w, p1.sigma_w}, {1.0}) +
                     prob::kl_diag_gaussian({p1.mu_b, p1.sigma_b}, {1.0});
  double kl2 = 0.0;
  for (std::size_t k = 0; k < k_paths; ++k) {
    std::vector<double> a(2);
    for (std::size_t j = 0; j < 2; ++j) {
      const double w = p1.mu_w[j] + p1.sigma_w[j] * z_w1(k, j);
      const double b = p1.mu_b[j] + p1.sigma_b[j] * z_b1(k, j);
      a[j] = std::max(0.0, x * w + b);
    }
    const LayerPosterior p2 = f.hypernet_forward(a, 2);
    kl2 += prob::kl_diag_gaussian({p2.mu_w, p2.sigma_w}, {1.0}) +
           prob::kl_diag_gaussian({p2.mu_b, p2.sigma_b}, {1.0});
  }
  EXPECT_NEAR(kl_model, kl1 + kl2 / static_cast<double>(k_paths), 1e-12);
}

TEST(Degenerate, FloorSigmaCollapsesToDeterministicHypernetwork) {
  for (auto kind : {ModelKind::ic_fdn, ModelKind::lp_fdn}) {
    auto m = build(ModelSpec::preset(kind), 4);
    auto& f = as_fdn(*m);
    const std::vector<double> xs{-3.5, -1.0, 0.0, 0.7, 2.5, 3.9};
    f.set_mean_only(true);
    Rng n0(1);
    const auto det = m->predict(xs, 5, n0);
    f.set_mean_only(false);
    f.set_rho_override(-20.0);
    Rng n1(1);
    const auto col = m->predict(xs, 50, n1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const PredictiveMoments mo = predictive_moments(col[i].mixture);
      // Floor noise propagates through the net, so the spread grows with |x|.
      EXPECT_LT(std::sqrt(mo.var_epistemic), 1e-2 * (1.0 + std::abs(xs[i])))
          << to_string(kind) << " x=" << xs[i];
      EXPECT_EQ(det[i].mixture.size(), 1u);
      EXPECT_NEAR(mo.mean, det[i].mixture.means[0], 0.02) << to_string(kind) << " x=" << xs[i];
    }
  }
}

TEST(Predict, ChunkSizeDoesNotChangeResults) {
  for (auto kind : {ModelKind::mlp_dropout, ModelKind::bayes, ModelKind::gauss_hyper,
                    ModelKind::ic_fdn, ModelKind::lp_fdn}) {
    auto m = build(ModelSpec::preset(kind));
    std::vector<double> xs;
    for (int i = 0; i < 21; ++i) xs.push_back(-4.0 + 0.4 * i);
    Rng a(3), b(3);
    const auto p1 = m->predict(xs, 7, a, 1);
    const auto p2 = m->predict(xs, 7, b, 16);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      EXPECT_EQ(p1[i].mixture.means, p2[i].mixture.means) << to_string(kind);
    }
  }
}

TEST(Predict, MixtureShapeAndVariances) {
  auto m = build(ModelSpec::preset(ModelKind::ic_fdn));
  Rng noise(1);
  Prediction p = m->predict(1.0, 100, noise);
  EXPECT_EQ(p.mixture.size(), 100u);
  EXPECT_DOUBLE_EQ(p.mixture.weight(), 0.01);
  for (double v : p.mixture.variances) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(m->predict(1.0, 0, noise), std::invalid_argument);
}

struct GradCase {
  ModelKind kind;
  Objective objective;
  bool hetero;
};

class ModelGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(ModelGradient, ObjectiveMatchesFiniteDifferences) {
  const GradCase c = GetParam();
  ExperimentConfig cfg;
  cfg.model = ModelSpec::preset(c.kind);
  cfg.model.heteroscedastic = c.hetero;
  cfg.likelihood = c.hetero ? Likelihood::heteroscedastic : Likelihood::homoscedastic;
  cfg.objective = c.objective;
  cfg.k_train = 3;
  // Smaller widths keep the finite-difference sweep fast; the graph is the same.
  if (c.kind == ModelKind::mlp_dropout || c.kind == ModelKind::bayes) cfg.model.d_hid = 12;
  if (c.kind == ModelKind::deep_ensemble) cfg.model.ensemble_size = 2;
  const auto rep = model_grad_check(cfg, 13, 3, 0.5);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> out;
  for (auto kind : {ModelKind::mlp_dropout, ModelKind::deep_ensemble, ModelKind::bayes,
                    ModelKind::gauss_hyper, ModelKind::ic_fdn, ModelKind::lp_fdn,
                    ModelKind::det_hyper}) {
    out.push_back({kind, Objective::beta_elbo, false});
    out.push_back({kind, Objective::iwae, false});
    out.push_back({kind, Objective::beta_elbo, true});
  }
  return out;
}

INSTANTIATE_TEST_SUITE_P(AllModels, ModelGradient, ::testing::ValuesIn(grad_cases()),
                         [](const auto& info) {
                           return to_string(info.param.kind) + "_" +
                                  to_string(info.param.objective) +
                                  (info.param.hetero ? "_hetero" : "");
                         });

}  // namespace
}  // namespace fdn
