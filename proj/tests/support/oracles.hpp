#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fdn/autodiff.hpp"
#include "fdn/metrics.hpp"
#include "fdn/models.hpp"
#include "fdn/rng.hpp"

// Reference computations written independently of the library code paths
// they check.
namespace fdn::oracle {

struct CaseResult {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Builds a scalar from bound inputs "in0", "in1", ...
using OpFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct OpCase {
  std::string name;
  // Random input tensors for one instance.
  std::function<std::vector<Tensor>(Rng&)> inputs;
  OpFn fn;
};

// Every differentiable op, reduced to a scalar through random weights.
std::vector<OpCase> op_cases();
// beta-ELBO, IWAE and heteroscedastic NLL on random columns.
std::vector<OpCase> loss_cases();

// Central-difference check of `c` on `instances` random draws.
CaseResult check_case(const OpCase& c, int instances, std::uint64_t seed, double rtol = 1e-4);

// KL(N(mu, s^2) || N(0, s0^2)) by Monte Carlo over n draws.
double kl_monte_carlo(double mu, double sigma, double sigma0, std::size_t n, Rng& rng);

// Integral of (F(t) - 1{t >= y})^2 for a Gaussian forecast by adaptive quadrature.
double crps_gaussian_quadrature(double mu, double sigma, double y);

// E|Y - y| - 0.5 E|Y - Y'| from n mixture draws.
double crps_energy(const PredictiveMixture& mix, double y, std::size_t n, Rng& rng);

// Sample variance of n mixture draws.
double mixture_sample_variance(const PredictiveMixture& mix, std::size_t n, Rng& rng);

// Mean of prefix risks after a stable sort by variance, by direct summation.
double aurc_brute_force(std::span<const PointEval> evals);

// 1 - 6 sum d^2 / (n (n^2 - 1)); valid without ties.
double spearman_rank_formula(std::span<const double> a, std::span<const double> b);

// Pearson correlation of average ranks computed by pairwise counting.
double spearman_pairwise_ranks(std::span<const double> a, std::span<const double> b);

// Intercept and slope from the 2x2 normal equations.
std::pair<double, double> ols_normal_equations(std::span<const double> x, std::span<const double> y);

}  // namespace fdn::oracle
