#pragma once

#include <span>

#include "fdn/autodiff.hpp"
#include "fdn/tensor.hpp"

namespace fdn::prob {

// Lower bound on every posterior standard deviation: sigma = floor + softplus(rho).
inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kLog2Pi = 1.8378770664093453;

struct DiagGaussian {
  Tensor mu;
  Tensor sigma;

  // Throws std::invalid_argument unless shapes agree and sigma >= kSigmaFloor.
  void validate() const;
};

struct PriorSpec {
  double sigma0 = 1.0;
};

// Cosine ramp from 0 to beta_max over the warm-up window, flat afterwards.
struct BetaSchedule {
  double beta_max = 0.01;
  long warmup_updates = 200;
};

double gaussian_logpdf(double y, double mu, double sigma2);
double kl_diag_gaussian(const DiagGaussian& q, const PriorSpec& prior);
double beta_at(long t, const BetaSchedule& sched);

// -(1/K) sum loglik + beta * kl
double beta_elbo_loss(std::span<const double> logliks, double kl, double beta);
// log((1/K) sum exp(v)), max-shifted.
double logmeanexp(std::span<const double> values);
// -logmeanexp(log_prior + loglik - log_q)
double iwae_loss(std::span<const double> logliks, std::span<const double> log_prior,
                 std::span<const double> log_q);
// (1/2K) sum_k [(y - mu_k)^2 / s2_k + log(2 pi s2_k)]
double hetero_nll(double y, std::span<const double> mu, std::span<const double> sigma2);

// ---- differentiable counterparts ----

// Element-wise Gaussian log-density with fixed variance.
ad::Var gaussian_loglik(ad::Var y, ad::Var mu, double sigma2);
// Element-wise Gaussian log-density with a variance operand.
ad::Var gaussian_loglik(ad::Var y, ad::Var mu, ad::Var sigma2);
// Row-wise KL(N(mu, diag sigma^2) || N(0, sigma0^2 I)); r x c -> r x 1.
ad::Var kl_diag_gaussian_rows(ad::Var mu, ad::Var sigma, double sigma0);
// Scalar loss from a column of K log-likelihoods and a scalar KL.
ad::Var beta_elbo_loss(ad::Var logliks, ad::Var kl, double beta);
// Scalar loss from aligned K x 1 columns.
ad::Var iwae_loss(ad::Var logliks, ad::Var log_prior, ad::Var log_q);
// Scalar loss from aligned K x 1 columns of means and variances for one target.
ad::Var hetero_nll(ad::Var y, ad::Var mu, ad::Var sigma2);

}  // namespace fdn::prob
