#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdn/models.hpp"
#include "fdn/tasks.hpp"

namespace fdn {

// Per test point record. `variance` is the epistemic predictive variance.
struct PointEval {
  double x = 0.0;
  double squared_error = 0.0;
  double variance = 0.0;
  double crps = 0.0;
  Split split = Split::test_id;
};

struct RankCorrelation {
  double value = 0.0;
  bool defined = false;  // false when either input is constant
};

// Ranks starting at 1; ties share the average of their positions.
std::vector<double> average_ranks(std::span<const double> v);
RankCorrelation spearman_rho(std::span<const double> a, std::span<const double> b);

struct LinearFit {
  double intercept = 0.0;  // a
  double slope = 0.0;      // b
};

// Ordinary least squares y ~ a + b x; throws when x has no spread.
LinearFit ols_fit(std::span<const double> x, std::span<const double> y);
// squared_error ~ a + b * variance over the given points.
LinearFit mse_var_fit(std::span<const PointEval> evals);

double normal_pdf(double z);
double normal_cdf(double z);
double crps_gaussian(double mu, double sigma, double y);
// Closed form for a uniformly weighted Gaussian mixture.
double crps_mixture(const PredictiveMixture& mix, double y);

struct RiskCoverage {
  std::vector<double> coverage;
  std::vector<double> risk;
  double aurc = 0.0;
};

// Abstain on the highest-variance points first. Sorted ascending by variance
// with ties kept in input order; AURC is the mean of the prefix risks.
RiskCoverage risk_coverage(std::span<const PointEval> evals);
double aurc(std::span<const PointEval> evals);

struct SplitSummary {
  std::size_t n = 0;
  double mse = 0.0;
  double var = 0.0;
  double crps = 0.0;
};

struct MetricsReport {
  SplitSummary id;
  SplitSummary ood;
  // Pooled over ID + OOD; empty when undefined.
  std::optional<double> rho;
  std::optional<double> b;
  std::optional<double> a;
  double aurc = 0.0;
  std::optional<double> rho_id;
  std::optional<double> rho_ood;
  double d_var = 0.0;
  double d_mse = 0.0;
  double d_crps = 0.0;
};

// Aggregates a per-point table into a report. Throws if a split is empty.
MetricsReport summarize(std::span<const PointEval> points);

struct Evaluation {
  MetricsReport report;
  std::vector<PointEval> points;
  RiskCoverage curve;
};

// Scores ID and OOD test points with K-component predictive mixtures.
Evaluation evaluate_model(const Model& model, const Dataset& data, std::size_t k_test, Rng& noise);

std::string report_to_json(const MetricsReport& r, int indent = 2);
MetricsReport report_from_json(const std::string& text);

// CSV x,split,mse,var,crps with split in {id, ood}.
void write_points_csv(std::span<const PointEval> points, const std::filesystem::path& path);
std::vector<PointEval> read_points_csv(const std::filesystem::path& path);

}  // namespace fdn
