#include "fdn/prob.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fdn::prob {

void DiagGaussian::validate() const {
  if (!mu.same_shape(sigma)) {
    throw std::invalid_argument("DiagGaussian: mu " + shape_string(mu.shape()) +
                                " and sigma " + shape_string(sigma.shape()) + " differ");
  }
  for (double s : sigma.data()) {
    if (!(s >= kSigmaFloor)) {
      throw std::invalid_argument("DiagGaussian: sigma " + std::to_string(s) +
                                  " below floor " + std::to_string(kSigmaFloor));
    }
  }
}

double gaussian_logpdf(double y, double mu, double sigma2) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("gaussian_logpdf: sigma2 must be > 0");
  const double d = y - mu;
  return -0.5 * d * d / sigma2 - 0.5 * (kLog2Pi + std::log(sigma2));
}

double kl_diag_gaussian(const DiagGaussian& q, const PriorSpec& prior) {
  q.validate();
  if (!(prior.sigma0 > 0.0)) throw std::invalid_argument("PriorSpec: sigma0 must be > 0");
  const double s02 = prior.sigma0 * prior.sigma0;
  double kl = 0.0;
  for (std::size_t j = 0; j < q.mu.size(); ++j) {
    const double s2 = q.sigma[j] * q.sigma[j];
    kl += (s2 + q.mu[j] * q.mu[j]) / s02 - 1.0 - std::log(s2 / s02);
  }
  return 0.5 * kl;
}

double beta_at(long t, const BetaSchedule& sched) {
  if (t <= 0) return 0.0;
  if (sched.warmup_updates <= 0 || t >= sched.warmup_updates) return sched.beta_max;
  const double frac = static_cast<double>(t) / static_cast<double>(sched.warmup_updates);
  return sched.beta_max * 0.5 * (1.0 - std::cos(std::numbers::pi * frac));
}

double beta_elbo_loss(std::span<const double> logliks, double kl, double beta) {
  if (logliks.empty()) throw std::invalid_argument("beta_elbo_loss: no log-likelihoods");
  double s = 0.0;
  for (double v : logliks) s += v;
  return -s / static_cast<double>(logliks.size()) + beta * kl;
}

double logmeanexp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("logmeanexp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(values.size()));
}

double iwae_loss(std::span<const double> logliks, std::span<const double> log_prior,
                 std::span<const double> log_q) {
  if (logliks.size() != log_prior.size() || logliks.size() != log_q.size()) {
    throw std::invalid_argument("iwae_loss: length mismatch (" + std::to_string(logliks.size()) +
                                ", " + std::to_string(log_prior.size()) + ", " +
                                std::to_string(log_q.size()) + ")");
  }
  std::vector<double> w(logliks.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = log_prior[k] + logliks[k] - log_q[k];
  return -logmeanexp(w);
}

double hetero_nll(double y, std::span<const double> mu, std::span<const double> sigma2) {
  if (mu.size() != sigma2.size() || mu.empty()) {
    throw std::invalid_argument("hetero_nll: need matching, non-empty mu and sigma2");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    if (!(sigma2[k] > 0.0)) throw std::invalid_argument("hetero_nll: sigma2 must be > 0");
    const double d = y - mu[k];
    s += d * d / sigma2[k] + kLog2Pi + std::log(sigma2[k]);
  }
  return s / (2.0 * static_cast<double>(mu.size()));
}

ad::Var gaussian_loglik(ad::Var y, ad::Var mu, double sigma2) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("gaussian_loglik: sigma2 must be > 0");
  return ad::add_scalar(ad::scale(ad::square(y - mu), -0.5 / sigma2),
                        -0.5 * (kLog2Pi + std::log(sigma2)));
}

ad::Var gaussian_loglik(ad::Var y, ad::Var mu, ad::Var sigma2) {
  for (double s : sigma2.value().data()) {
    if (!(s > 0.0)) throw std::invalid_argument("gaussian_loglik: sigma2 must be > 0");
  }
  ad::Var quad = ad::square(y - mu) / sigma2;
  return ad::scale(quad + ad::log(sigma2) + kLog2Pi, -0.5);
}

ad::Var kl_diag_gaussian_rows(ad::Var mu, ad::Var sigma, double sigma0) {
  if (!(sigma0 > 0.0)) throw std::invalid_argument("kl_diag_gaussian_rows: sigma0 must be > 0");
  const double inv_s02 = 1.0 / (sigma0 * sigma0);
  const double log_s02 = std::log(sigma0 * sigma0);
  ad::Var s2 = ad::square(sigma);
  ad::Var terms = ad::scale(s2 + ad::square(mu), inv_s02) - ad::log(s2) + (log_s02 - 1.0);
  return ad::scale(ad::sum_cols(terms), 0.5);
}

ad::Var beta_elbo_loss(ad::Var logliks, ad::Var kl, double beta) {
  if (logliks.value().empty()) throw std::invalid_argument("beta_elbo_loss: no log-likelihoods");
  return ad::neg(ad::mean(logliks)) + ad::scale(kl, beta);
}

ad::Var iwae_loss(ad::Var logliks, ad::Var log_prior, ad::Var log_q) {
  if (!logliks.value().same_shape(log_prior.value()) ||
      !logliks.value().same_shape(log_q.value()) || logliks.cols() != 1) {
    throw std::invalid_argument("iwae_loss: expects aligned K x 1 columns");
  }
  ad::Var w = log_prior + logliks - log_q;
  return ad::neg(ad::group_logmeanexp_rows(w, w.rows()));
}

ad::Var hetero_nll(ad::Var y, ad::Var mu, ad::Var sigma2) {
  return ad::neg(ad::mean(gaussian_loglik(y, mu, sigma2)));
}

}  // namespace fdn::prob
