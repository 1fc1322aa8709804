#include "fdn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fdn {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

RankCorrelation spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman_rho: need two equal-length inputs with >= 2 entries");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, false};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), true};
}

LinearFit ols_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("ols_fit: need two equal-length inputs with >= 2 entries");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("ols_fit: regressor has zero spread");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

LinearFit mse_var_fit(std::span<const PointEval> evals) {
  std::vector<double> var, se;
  var.reserve(evals.size());
  se.reserve(evals.size());
  for (const auto& p : evals) {
    var.push_back(p.variance);
    se.push_back(p.squared_error);
  }
  return ols_fit(var, se);
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double crps_gaussian(double mu, double sigma, double y) {
  if (!(sigma > 0.0)) throw std::invalid_argument("crps_gaussian: sigma must be > 0");
  const double z = (y - mu) / sigma;
  return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
}

namespace {

// E|X| for X ~ N(m, s^2).
double abs_moment(double m, double s2) {
  const double s = std::sqrt(s2);
  return m * (2.0 * normal_cdf(m / s) - 1.0) + 2.0 * s * normal_pdf(m / s);
}

}  // namespace

double crps_mixture(const PredictiveMixture& mix, double y) {
  mix.validate();
  const std::size_t k = mix.size();
  const double w = mix.weight();
  double first = 0.0;
  for (std::size_t i = 0; i < k; ++i) first += abs_moment(y - mix.means[i], mix.variances[i]);
  first *= w;
  double pair = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    pair += abs_moment(0.0, 2.0 * mix.variances[i]);
    for (std::size_t j = i + 1; j < k; ++j) {
      pair += 2.0 * abs_moment(mix.means[i] - mix.means[j], mix.variances[i] + mix.variances[j]);
    }
  }
  return std::max(first - 0.5 * w * w * pair, 0.0);
}

RiskCoverage risk_coverage(std::span<const PointEval> evals) {
  if (evals.empty()) throw std::invalid_argument("risk_coverage: no points");
  std::vector<std::size_t> order(evals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return evals[i].variance < evals[j].variance;
  });
  RiskCoverage rc;
  const double n = static_cast<double>(evals.size());
  double cum = 0.0, area = 0.0;
  for (std::size_t m = 0; m < order.size(); ++m) {
    cum += evals[order[m]].squared_error;
    const double risk = cum / static_cast<double>(m + 1);
    rc.coverage.push_back(static_cast<double>(m + 1) / n);
    rc.risk.push_back(risk);
    area += risk;
  }
  rc.aurc = area / n;
  return rc;
}

double aurc(std::span<const PointEval> evals) { return risk_coverage(evals).aurc; }

namespace {

SplitSummary summarize_split(std::span<const PointEval> points, Split s) {
  SplitSummary out;
  for (const auto& p : points) {
    if (p.split != s) continue;
    ++out.n;
    out.mse += p.squared_error;
    out.var += p.variance;
    out.crps += p.crps;
  }
  if (out.n == 0) throw std::invalid_argument("summarize: split " + to_string(s) + " is empty");
  const double n = static_cast<double>(out.n);
  out.mse /= n;
  out.var /= n;
  out.crps /= n;
  return out;
}

std::optional<double> rank_of(std::span<const PointEval> points) {
  if (points.size() < 2) return std::nullopt;
  std::vector<double> var, se;
  for (const auto& p : points) {
    var.push_back(p.variance);
    se.push_back(p.squared_error);
  }
  auto r = spearman_rho(var, se);
  return r.defined ? std::optional<double>(r.value) : std::nullopt;
}

}  // namespace

MetricsReport summarize(std::span<const PointEval> points) {
  MetricsReport r;
  r.id = summarize_split(points, Split::test_id);
  r.ood = summarize_split(points, Split::test_ood);
  r.rho = rank_of(points);
  try {
    LinearFit f = mse_var_fit(points);
    r.a = f.intercept;
    r.b = f.slope;
  } catch (const std::invalid_argument&) {
    // no variance spread: fit undefined
  }
  r.aurc = aurc(points);
  std::vector<PointEval> id, ood;
  for (const auto& p : points) (p.split == Split::test_id ? id : ood).push_back(p);
  r.rho_id = rank_of(id);
  r.rho_ood = rank_of(ood);
  r.d_var = r.ood.var - r.id.var;
  r.d_mse = r.ood.mse - r.id.mse;
  r.d_crps = r.ood.crps - r.id.crps;
  return r;
}

Evaluation evaluate_model(const Model& model, const Dataset& data, std::size_t k_test, Rng& noise) {
  if (k_test == 0) throw std::invalid_argument("evaluate_model: K_test must be >= 1");
  Evaluation ev;
  for (Split s : {Split::test_id, Split::test_ood}) {
    const auto xs = data.xs(s);
    const auto ys = data.ys(s);
    if (xs.empty()) throw std::invalid_argument("evaluate_model: split " + to_string(s) + " is empty");
    const auto preds = model.predict(xs, k_test, noise);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto mom = predictive_moments(preds[i].mixture);
      PointEval p;
      p.x = xs[i];
      p.split = s;
      p.squared_error = (ys[i] - mom.mean) * (ys[i] - mom.mean);
      p.variance = mom.var_epistemic;
      p.crps = crps_mixture(preds[i].mixture, ys[i]);
      ev.points.push_back(p);
    }
  }
  ev.report = summarize(ev.points);
  ev.curve = risk_coverage(ev.points);
  return ev;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

nlohmann::json split_json(const SplitSummary& s) {
  return {{"n", s.n}, {"mse", s.mse}, {"var", s.var}, {"crps", s.crps}};
}

SplitSummary split_from(const nlohmann::json& j) {
  return {j.at("n").get<std::size_t>(), j.at("mse").get<double>(), j.at("var").get<double>(),
          j.at("crps").get<double>()};
}

}  // namespace

std::string report_to_json(const MetricsReport& r, int indent) {
  nlohmann::json j;
  j["rho"] = opt(r.rho);
  j["b"] = opt(r.b);
  j["a"] = opt(r.a);
  j["aurc"] = r.aurc;
  j["d_var"] = r.d_var;
  j["d_mse"] = r.d_mse;
  j["d_crps"] = r.d_crps;
  j["rho_id"] = opt(r.rho_id);
  j["rho_ood"] = opt(r.rho_ood);
  j["id"] = split_json(r.id);
  j["ood"] = split_json(r.ood);
  return j.dump(indent);
}

MetricsReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.rho = opt_from(j, "rho");
  r.b = opt_from(j, "b");
  r.a = opt_from(j, "a");
  r.aurc = j.at("aurc").get<double>();
  r.d_var = j.at("d_var").get<double>();
  r.d_mse = j.at("d_mse").get<double>();
  r.d_crps = j.at("d_crps").get<double>();
  r.rho_id = opt_from(j, "rho_id");
  r.rho_ood = opt_from(j, "rho_ood");
  r.id = split_from(j.at("id"));
  r.ood = split_from(j.at("ood"));
  return r;
}

void write_points_csv(std::span<const PointEval> points, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "x,split,mse,var,crps\n";
  for (const auto& p : points) {
    out << p.x << ',' << (p.split == Split::test_id ? "id" : "ood") << ',' << p.squared_error
        << ',' << p.variance << ',' << p.crps << '\n';
  }
}

std::vector<PointEval> read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "x,split,mse,var,crps") throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<PointEval> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (int i = 0; i < 5; ++i) {
      if (!std::getline(ss, f[i], ',')) throw std::runtime_error(path.string() + ": malformed row");
    }
    PointEval p;
    p.x = std::stod(f[0]);
    if (f[1] == "id") p.split = Split::test_id;
    else if (f[1] == "ood") p.split = Split::test_ood;
    else throw std::runtime_error(path.string() + ": unknown split '" + f[1] + "'");
    p.squared_error = std::stod(f[2]);
    p.variance = std::stod(f[3]);
    p.crps = std::stod(f[4]);
    out.push_back(p);
  }
  return out;
}

}  // namespace fdn
