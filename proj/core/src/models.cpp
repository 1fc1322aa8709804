#include "fdn/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fdn {
namespace {

using ad::Var;

constexpr std::size_t out_dim(const ModelSpec& s) { return s.heteroscedastic ? 2 : 1; }

// Flat per-row layout of the base network: [W1 (h), b1 (h)] then
// [W2 (d_out*h), b2 (d_out)].
std::size_t layer1_width(const ModelSpec& s) { return 2 * static_cast<std::size_t>(s.d_hid); }
std::size_t layer2_width(const ModelSpec& s) {
  return out_dim(s) * (static_cast<std::size_t>(s.d_hid) + 1);
}
std::size_t base_width(const ModelSpec& s) { return layer1_width(s) + layer2_width(s); }

std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

Var activate(Var a, Activation act) {
  return act == Activation::tanh ? ad::tanh(a) : ad::relu(a);
}

Tensor uniform_init(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  Tensor t(rows, cols);
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

// Default dense init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
void add_dense(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out,
               Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  ps.add(prefix + ".W1", uniform_init(rng, in, out, bound));
  ps.add(prefix + ".b1", uniform_init(rng, 1, out, bound));
}

// Hidden activations of the base network. w1/b1 are 1 x h (shared) or R x h.
Var base_hidden(Var x, Var w1, Var b1, Activation act) { return activate(x * w1 + b1, act); }

struct HeadOut {
  Var mean;
  Var variance;
};

HeadOut base_head(Var a, Var w2, Var b2, const ModelSpec& s) {
  const std::size_t h = static_cast<std::size_t>(s.d_hid);
  HeadOut out;
  if (!s.heteroscedastic) {
    out.mean = ad::sum_cols(a * w2) + b2;
    return out;
  }
  out.mean = ad::sum_cols(a * ad::slice_cols(w2, 0, h)) + ad::slice_cols(b2, 0, 1);
  Var raw = ad::sum_cols(a * ad::slice_cols(w2, h, h)) + ad::slice_cols(b2, 1, 1);
  out.variance = ad::square(posterior_sigma(raw));
  return out;
}

// Accumulates log q(theta) and log p0(theta) row sums for sampled blocks.
struct DensityAccumulator {
  bool enabled = false;
  double sigma0 = 1.0;
  Var log_q;
  Var log_prior;

  void add(Var theta, Var sigma, const Tensor& z) {
    if (!enabled) return;
    const std::size_t c = z.cols();
    Tensor zq(z.rows(), 1);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += z(r, j) * z(r, j);
      zq[r] = -0.5 * s - 0.5 * static_cast<double>(c) * prob::kLog2Pi;
    }
    ad::Tape& tape = theta.tape();
    Var lq = tape.constant(std::move(zq)) - ad::sum_cols(ad::log(sigma));
    Var lp = ad::add_scalar(ad::scale(ad::sum_cols(ad::square(theta)), -0.5 / (sigma0 * sigma0)),
                            -static_cast<double>(c) * (std::log(sigma0) + 0.5 * prob::kLog2Pi));
    log_q = log_q.valid() ? log_q + lq : lq;
    log_prior = log_prior.valid() ? log_prior + lp : lp;
  }
};

// Samples theta = mu + sigma * z for `rows` rows; mu and sigma are 1 x c or
// rows x c. Rows are laid out as input i, path k.
Var draw(Var mu, Var sigma, std::size_t rows, std::size_t samples, NoiseLayout layout,
         Rng& noise, DensityAccumulator& dens) {
  Tensor z;
  if (layout == NoiseLayout::shared && rows > samples) {
    const Tensor base = noise.normal(samples, mu.cols());
    z = Tensor(rows, mu.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(&base(r % samples, 0), base.cols(), &z(r, 0));
    }
  } else {
    z = noise.normal(rows, mu.cols());
  }
  Var theta = reparameterize(mu, sigma, z);
  dens.add(theta, sigma, z);
  return theta;
}

Var zeros_column(ad::Tape& tape, std::size_t n) { return tape.constant(Tensor(n, 1)); }

ForwardOutput finish(ForwardOutput out, const DensityAccumulator& dens) {
  if (dens.enabled) {
    out.log_q = dens.log_q;
    out.log_prior = dens.log_prior;
  }
  return out;
}

// Density terms for models without a weight density: both zero.
void zero_density(ForwardOutput& out, ad::Tape& tape) {
  out.log_q = zeros_column(tape, out.means.rows());
  out.log_prior = zeros_column(tape, out.means.rows());
}

std::string format_member(std::size_t m) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "m%02zu", m);
  return buf;
}

// Writes hypernetwork output-layer init: mean outputs are scaled to the
// target base parameter's default init; rho outputs start at rho_init.
struct OutputBlock {
  std::size_t offset;
  std::size_t width;
  double fan_in;  // of the base parameter this block generates; 0 for rho blocks
};

void init_hyper_output(Tensor& w, Tensor& b, const std::vector<OutputBlock>& blocks,
                       double rho_init, std::size_t hyper_in, Rng& rng) {
  const double wb = 1.0 / std::sqrt(static_cast<double>(hyper_in));
  for (const auto& blk : blocks) {
    for (std::size_t j = blk.offset; j < blk.offset + blk.width; ++j) {
      if (blk.fan_in > 0.0) {
        const double scale = 1.0 / std::sqrt(blk.fan_in);
        for (std::size_t r = 0; r < w.rows(); ++r) w(r, j) = rng.uniform(-wb, wb) * scale;
        b[j] = rng.uniform(-scale, scale);
      } else {
        for (std::size_t r = 0; r < w.rows(); ++r) w(r, j) = rng.uniform(-wb, wb);
        b[j] = rho_init;
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- naming

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mlp_dropout: return "mlp_dropout";
    case ModelKind::deep_ensemble: return "deep_ensemble";
    case ModelKind::bayes: return "bayes";
    case ModelKind::gauss_hyper: return "gauss_hyper";
    case ModelKind::ic_fdn: return "ic_fdn";
    case ModelKind::lp_fdn: return "lp_fdn";
    case ModelKind::det_hyper: return "det_hyper";
  }
  return "unknown";
}

std::string display_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::mlp_dropout: return "MLPDropoutNet";
    case ModelKind::deep_ensemble: return "DeepEnsembleNet";
    case ModelKind::bayes: return "BayesNet";
    case ModelKind::gauss_hyper: return "GaussHyperNet";
    case ModelKind::ic_fdn: return "IC-FDNet";
    case ModelKind::lp_fdn: return "LP-FDNet";
    case ModelKind::det_hyper: return "HyperNet";
  }
  return "unknown";
}

std::string to_string(Activation act) { return act == Activation::tanh ? "tanh" : "relu"; }

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : {ModelKind::mlp_dropout, ModelKind::deep_ensemble, ModelKind::bayes,
                 ModelKind::gauss_hyper, ModelKind::ic_fdn, ModelKind::lp_fdn,
                 ModelKind::det_hyper}) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

ModelSpec ModelSpec::preset(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  switch (kind) {
    case ModelKind::mlp_dropout:
      s.d_hid = 333;
      s.d_hyper = 0;
      break;
    case ModelKind::deep_ensemble:
      s.d_hid = 64;
      s.d_hyper = 0;
      s.ensemble_size = 10;
      s.dropout_p = 0.0;
      s.enforce_budget = false;
      break;
    case ModelKind::bayes:
      s.d_hid = 166;
      s.d_hyper = 0;
      break;
    case ModelKind::gauss_hyper:
      // 24 hidden units with a 9 -> 5 trunk gives 935; 25 is the smallest
      // width inside the +-5% budget (971).
      s.d_hid = 25;
      s.d_hyper = 5;
      s.d_h = 9;
      break;
    case ModelKind::ic_fdn:
      s.d_hid = 23;
      s.d_hyper = 6;
      break;
    case ModelKind::lp_fdn:
      s.d_hid = 24;
      s.d_hyper = 5;
      break;
    case ModelKind::det_hyper:
      s.d_hid = 46;
      s.d_hyper = 6;
      break;
  }
  if (kind != ModelKind::mlp_dropout) s.dropout_p = 0.0;
  return s;
}

// ---------------------------------------------------------------- budget

std::size_t count_params(const ModelSpec& s) {
  if (s.d_hid <= 0) throw std::invalid_argument("count_params: d_hid must be positive");
  const std::size_t h = static_cast<std::size_t>(s.d_hid);
  const std::size_t base = base_width(s);
  const std::size_t dy = static_cast<std::size_t>(std::max(s.d_hyper, 0));
  switch (s.kind) {
    case ModelKind::mlp_dropout: return base;
    case ModelKind::deep_ensemble: return static_cast<std::size_t>(s.ensemble_size) * base;
    case ModelKind::bayes: return 2 * base;
    case ModelKind::gauss_hyper: {
      const std::size_t dh = static_cast<std::size_t>(s.d_h);
      return dh + dense_count(dh, dy) + dense_count(dy, 2 * base);
    }
    case ModelKind::ic_fdn:
    case ModelKind::lp_fdn:
    case ModelKind::det_hyper: {
      const std::size_t mult = s.kind == ModelKind::det_hyper ? 1 : 2;
      const std::size_t in2 = s.kind == ModelKind::lp_fdn ? h : 1;
      return dense_count(1, dy) + dense_count(dy, mult * layer1_width(s)) + dense_count(in2, dy) +
             dense_count(dy, mult * layer2_width(s));
    }
  }
  return 0;
}

BudgetVerdict check_budget(const ModelSpec& spec) {
  BudgetVerdict v;
  v.count = count_params(spec);
  v.target = spec.target_params;
  v.rel_deviation = std::abs(static_cast<double>(v.count) - static_cast<double>(v.target)) /
                    static_cast<double>(v.target);
  v.within = v.rel_deviation <= spec.tolerance + 1e-12;
  return v;
}

BudgetError::BudgetError(const BudgetVerdict& v)
    : std::runtime_error("parameter budget violated: " + std::to_string(v.count) +
                         " parameters vs target " + std::to_string(v.target) + " (deviation " +
                         std::to_string(v.rel_deviation * 100.0) + "%)"),
      verdict_(v) {}

void require_budget(const ModelSpec& spec) {
  BudgetVerdict v = check_budget(spec);
  if (spec.enforce_budget && !v.within) throw BudgetError(v);
}

// ---------------------------------------------------------------- posteriors

void LayerPosterior::validate() const {
  prob::DiagGaussian{mu_w, sigma_w}.validate();
  prob::DiagGaussian{mu_b, sigma_b}.validate();
}

LayerSample sample_layer(const LayerPosterior& post, Rng& rng) {
  post.validate();
  LayerSample s{post.mu_w, post.mu_b};
  for (std::size_t i = 0; i < s.w.size(); ++i) s.w[i] += post.sigma_w[i] * rng.normal();
  for (std::size_t i = 0; i < s.b.size(); ++i) s.b[i] += post.sigma_b[i] * rng.normal();
  return s;
}

Var reparameterize(Var mu, Var sigma, const Tensor& z) {
  return mu + sigma * mu.tape().constant(z);
}

Var posterior_sigma(Var rho) { return ad::add_scalar(ad::softplus(rho), prob::kSigmaFloor); }

void PredictiveMixture::validate() const {
  if (means.empty()) throw std::invalid_argument("PredictiveMixture: K must be >= 1");
  if (means.size() != variances.size()) {
    throw std::invalid_argument("PredictiveMixture: means and variances differ in length");
  }
  for (double v : variances) {
    if (!(v > 0.0)) throw std::invalid_argument("PredictiveMixture: variances must be > 0");
  }
}

PredictiveMoments predictive_moments(const PredictiveMixture& mix) {
  mix.validate();
  const double k = static_cast<double>(mix.size());
  PredictiveMoments m;
  for (double v : mix.means) m.mean += v;
  m.mean /= k;
  double alea = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double d = mix.means[i] - m.mean;
    m.var_epistemic += d * d;
    alea += mix.variances[i];
  }
  m.var_epistemic /= k;
  m.var_total = alea / k + m.var_epistemic;
  return m;
}

// ---------------------------------------------------------------- Model

Prediction Model::predict(double x, std::size_t samples, Rng& noise) const {
  const double xs[1] = {x};
  return predict(std::span<const double>(xs, 1), samples, noise).front();
}

std::vector<Prediction> Model::predict(std::span<const double> xs, std::size_t samples,
                                       Rng& noise, std::size_t chunk) const {
  if (samples == 0) throw std::invalid_argument("predict: K must be >= 1");
  std::vector<Prediction> out;
  out.reserve(xs.size());
  chunk = std::max<std::size_t>(chunk, 1);
  // Every chunk replays the same noise, so path k is one function sample
  // across all of xs regardless of chunking.
  const Rng base(noise.next_u64());
  for (std::size_t start = 0; start < xs.size(); start += chunk) {
    const std::size_t n = std::min(chunk, xs.size() - start);
    ad::Tape tape(false);
    Rng replay = base;
    ForwardOutput fo = forward(tape, Tensor::column(xs.subspan(start, n)), samples, replay, false,
                               NoiseLayout::shared);
    const Tensor& means = fo.means.value();
    for (std::size_t i = 0; i < n; ++i) {
      Prediction p;
      p.mixture.means.resize(fo.samples);
      p.mixture.variances.resize(fo.samples, spec_.obs_variance);
      for (std::size_t k = 0; k < fo.samples; ++k) {
        const double m = means[i * fo.samples + k];
        if (!std::isfinite(m)) {
          throw std::runtime_error("predict: non-finite output at x=" +
                                   std::to_string(xs[start + i]));
        }
        p.mixture.means[k] = m;
        if (fo.variances.valid()) p.mixture.variances[k] = fo.variances.value()[i * fo.samples + k];
      }
      if (fo.has_kl) p.kl = fo.kl.value()[i];
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------- MLP / dropout

MlpModel::MlpModel(ModelSpec spec, Rng& init) : Model(std::move(spec)) {
  if (spec_.dropout_p < 0.0 || spec_.dropout_p >= 1.0) {
    throw std::invalid_argument("MlpModel: dropout_p must lie in [0, 1)");
  }
  const std::size_t h = static_cast<std::size_t>(spec_.d_hid);
  const std::size_t d = out_dim(spec_);
  const double b2 = 1.0 / std::sqrt(static_cast<double>(h));
  params_.add("W1", uniform_init(init, 1, h, 1.0));
  params_.add("b1", uniform_init(init, 1, h, 1.0));
  params_.add("W2", uniform_init(init, 1, d * h, b2));
  params_.add("b2", uniform_init(init, 1, d, b2));
}

ForwardOutput MlpModel::forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                                bool need_density, NoiseLayout layout) const {
  const std::size_t n = x.rows();
  const std::size_t rows = n * samples;
  // The hidden activation is the same for every path of an input; only the
  // dropout mask differs.
  Var a = base_hidden(tape.constant(x), tape.param(params_, "W1"), tape.param(params_, "b1"),
                      spec_.activation);
  a = ad::repeat_rows(a, samples);
  if (spec_.dropout_p > 0.0) {
    const double keep = 1.0 - spec_.dropout_p;
    const std::size_t h = static_cast<std::size_t>(spec_.d_hid);
    Tensor mask;
    if (layout == NoiseLayout::shared && rows > samples) {
      const Tensor base = noise.bernoulli_mask(samples, h, keep, 1.0 / keep);
      mask = Tensor(rows, h);
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(&base(r % samples, 0), h, &mask(r, 0));
    } else {
      mask = noise.bernoulli_mask(rows, h, keep, 1.0 / keep);
    }
    a = a * tape.constant(std::move(mask));
  }
  HeadOut head = base_head(a, tape.param(params_, "W2"), tape.param(params_, "b2"), spec_);
  ForwardOutput out;
  out.means = head.mean;
  out.variances = head.variance;
  out.samples = samples;
  out.kl = zeros_column(tape, n);
  if (need_density) zero_density(out, tape);
  return out;
}

// ---------------------------------------------------------------- ensemble

EnsembleModel::EnsembleModel(ModelSpec spec, Rng& init) : Model(std::move(spec)) {
  if (spec_.ensemble_size < 1) throw std::invalid_argument("EnsembleModel: M must be >= 1");
  const std::size_t h = static_cast<std::size_t>(spec_.d_hid);
  const std::size_t d = out_dim(spec_);
  const double b2 = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t m = 0; m < members(); ++m) {
    Rng member_rng = init.derive(format_member(m));
    const std::string p = member_prefix(m);
    params_.add(p + "W1", uniform_init(member_rng, 1, h, 1.0));
    params_.add(p + "b1", uniform_init(member_rng, 1, h, 1.0));
    params_.add(p + "W2", uniform_init(member_rng, 1, d * h, b2));
    params_.add(p + "b2", uniform_init(member_rng, 1, d, b2));
  }
  trained_.assign(members(), false);
}

std::string EnsembleModel::member_prefix(std::size_t m) const { return format_member(m) + "."; }

void EnsembleModel::set_trained_flags(std::vector<bool> flags) {
  if (flags.size() != members()) {
    throw std::invalid_argument("EnsembleModel: trained flag count does not match M");
  }
  trained_ = std::move(flags);
}

ForwardOutput EnsembleModel::member_forward(ad::Tape& tape, std::size_t m, const Tensor& x) const {
  if (m >= members()) throw std::out_of_range("EnsembleModel: member index out of range");
  const std::string p = member_prefix(m);
  Var a = base_hidden(tape.constant(x), tape.param(params_, p + "W1"),
                      tape.param(params_, p + "b1"), spec_.activation);
  HeadOut head = base_head(a, tape.param(params_, p + "W2"), tape.param(params_, p + "b2"), spec_);
  ForwardOutput out;
  out.means = head.mean;
  out.variances = head.variance;
  out.samples = 1;
  out.kl = zeros_column(tape, x.rows());
  return out;
}

ForwardOutput EnsembleModel::forward(ad::Tape& tape, const Tensor& x, std::size_t, Rng&,
                                     bool need_density, NoiseLayout) const {
  for (std::size_t m = 0; m < members(); ++m) {
    if (!trained_[m]) {
      throw std::logic_error("EnsembleModel: member " + std::to_string(m) + " is untrained");
    }
  }
  // Members are combined by value; training goes through member_forward.
  const std::size_t n = x.rows();
  const std::size_t mm = members();
  Tensor means(n * mm, 1);
  Tensor vars(n * mm, 1);
  for (std::size_t m = 0; m < mm; ++m) {
    ad::Tape local(false);
    ForwardOutput fo = member_forward(local, m, x);
    for (std::size_t i = 0; i < n; ++i) {
      means[i * mm + m] = fo.means.value()[i];
      if (fo.variances.valid()) vars[i * mm + m] = fo.variances.value()[i];
    }
  }
  ForwardOutput out;
  out.means = tape.constant(std::move(means));
  if (spec_.heteroscedastic) out.variances = tape.constant(std::move(vars));
  out.samples = mm;
  out.kl = zeros_column(tape, n);
  if (need_density) zero_density(out, tape);
  return out;
}

// ---------------------------------------------------------------- Bayes

namespace {

const char* const kBaseNames[4] = {"W1", "b1", "W2", "b2"};

std::array<std::size_t, 4> base_sizes(const ModelSpec& s) {
  const std::size_t h = static_cast<std::size_t>(s.d_hid);
  const std::size_t d = out_dim(s);
  return {h, h, d * h, d};
}

std::array<double, 4> base_fan_in(const ModelSpec& s) {
  const double h = static_cast<double>(s.d_hid);
  return {1.0, 1.0, h, h};
}

// Samples all four base blocks from global posteriors (1 x c each) and runs
// the base network on R = n * samples rows.
ForwardOutput global_posterior_forward(ad::Tape& tape, const ModelSpec& spec, const Tensor& x,
                                       std::size_t samples, Rng& noise, bool need_density,
                                       NoiseLayout layout, const std::array<Var, 4>& mu,
                                       const std::array<Var, 4>& sigma) {
  const std::size_t n = x.rows();
  const std::size_t rows = n * samples;
  DensityAccumulator dens{need_density, spec.prior_sigma0, {}, {}};
  std::array<Var, 4> theta;
  Var kl;
  for (std::size_t i = 0; i < 4; ++i) {
    theta[i] = draw(mu[i], sigma[i], rows, samples, layout, noise, dens);
    Var k = prob::kl_diag_gaussian_rows(mu[i], sigma[i], spec.prior_sigma0);
    kl = kl.valid() ? kl + k : k;
  }
  Var xr = ad::repeat_rows(tape.constant(x), samples);
  Var a = base_hidden(xr, theta[0], theta[1], spec.activation);
  HeadOut head = base_head(a, theta[2], theta[3], spec);
  ForwardOutput out;
  out.means = head.mean;
  out.variances = head.variance;
  out.samples = samples;
  out.kl = ad::repeat_rows(kl, n);
  out.has_kl = true;
  return finish(out, dens);
}

}  // namespace

BayesModel::BayesModel(ModelSpec spec, Rng& init) : Model(std::move(spec)) {
  const auto sizes = base_sizes(spec_);
  const auto fans = base_fan_in(spec_);
  for (std::size_t i = 0; i < 4; ++i) {
    params_.add(std::string(kBaseNames[i]) + ".mu",
                uniform_init(init, 1, sizes[i], 1.0 / std::sqrt(fans[i])));
    params_.add(std::string(kBaseNames[i]) + ".rho", Tensor(1, sizes[i], spec_.rho_init));
  }
}

ForwardOutput BayesModel::forward(ad::Tape& tape, const Tensor& x, std::size_t samples,
                                  Rng& noise, bool need_density, NoiseLayout layout) const {
  std::array<Var, 4> mu, sigma;
  for (std::size_t i = 0; i < 4; ++i) {
    mu[i] = tape.param(params_, std::string(kBaseNames[i]) + ".mu");
    sigma[i] = posterior_sigma(tape.param(params_, std::string(kBaseNames[i]) + ".rho"));
  }
  return global_posterior_forward(tape, spec_, x, samples, noise, need_density, layout, mu, sigma);
}

// ---------------------------------------------------------------- Gaussian hypernetwork

GaussHyperModel::GaussHyperModel(ModelSpec spec, Rng& init) : Model(std::move(spec)) {
  if (spec_.d_h <= 0 || spec_.d_hyper <= 0) {
    throw std::invalid_argument("GaussHyperModel: d_h and d_hyper must be positive");
  }
  const std::size_t dh = static_cast<std::size_t>(spec_.d_h);
  const std::size_t dy = static_cast<std::size_t>(spec_.d_hyper);
  const std::size_t base = base_width(spec_);
  params_.add("latent", init.normal(1, dh));
  add_dense(params_, "trunk", dh, dy, init);
  Tensor& w2 = params_.add("trunk.W2", Tensor(dy, 2 * base));
  Tensor& b2 = params_.add("trunk.b2", Tensor(1, 2 * base));
  std::vector<OutputBlock> blocks;
  const auto sizes = base_sizes(spec_);
  const auto fans = base_fan_in(spec_);
  std::size_t off = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    blocks.push_back({off, sizes[i], fans[i]});
    blocks.push_back({base + off, sizes[i], 0.0});
    off += sizes[i];
  }
  init_hyper_output(w2, b2, blocks, spec_.rho_init, dy, init);
}

ForwardOutput GaussHyperModel::forward(ad::Tape& tape, const Tensor& x, std::size_t samples,
                                       Rng& noise, bool need_density, NoiseLayout layout) const {
  const std::size_t base = base_width(spec_);
  Var u = activate(ad::matmul(tape.param(params_, "latent"), tape.param(params_, "trunk.W1")) +
                       tape.param(params_, "trunk.b1"),
                   spec_.activation);
  Var o = ad::matmul(u, tape.param(params_, "trunk.W2")) + tape.param(params_, "trunk.b2");
  const auto sizes = base_sizes(spec_);
  std::array<Var, 4> mu, sigma;
  std::size_t off = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    mu[i] = ad::slice_cols(o, off, sizes[i]);
    sigma[i] = posterior_sigma(ad::slice_cols(o, base + off, sizes[i]));
    off += sizes[i];
  }
  return global_posterior_forward(tape, spec_, x, samples, noise, need_density, layout, mu, sigma);
}

LayerPosterior GaussHyperModel::posterior(std::size_t layer) const {
  if (layer != 1 && layer != 2) throw std::invalid_argument("posterior: layer must be 1 or 2");
  ad::Tape tape(false);
  const std::size_t base = base_width(spec_);
  Var u = activate(ad::matmul(tape.param(params_, "latent"), tape.param(params_, "trunk.W1")) +
                       tape.param(params_, "trunk.b1"),
                   spec_.activation);
  Var o = ad::matmul(u, tape.param(params_, "trunk.W2")) + tape.param(params_, "trunk.b2");
  const auto sizes = base_sizes(spec_);
  const std::size_t wi = layer == 1 ? 0 : 2;
  std::size_t off = 0;
  for (std::size_t i = 0; i < wi; ++i) off += sizes[i];
  LayerPosterior p;
  p.mu_w = ad::slice_cols(o, off, sizes[wi]).value();
  p.sigma_w = posterior_sigma(ad::slice_cols(o, base + off, sizes[wi])).value();
  p.mu_b = ad::slice_cols(o, off + sizes[wi], sizes[wi + 1]).value();
  p.sigma_b = posterior_sigma(ad::slice_cols(o, base + off + sizes[wi], sizes[wi + 1])).value();
  p.validate();
  return p;
}

// ---------------------------------------------------------------- FDN

FdnModel::FdnModel(ModelSpec spec, Rng& init) : Model(std::move(spec)) {
  if (spec_.kind != ModelKind::ic_fdn && spec_.kind != ModelKind::lp_fdn &&
      spec_.kind != ModelKind::det_hyper) {
    throw std::invalid_argument("FdnModel: kind must be ic_fdn, lp_fdn or det_hyper");
  }
  if (spec_.d_hyper <= 0) throw std::invalid_argument("FdnModel: d_hyper must be positive");
  const std::size_t dy = static_cast<std::size_t>(spec_.d_hyper);
  const bool stochastic = spec_.kind != ModelKind::det_hyper;
  const auto sizes = base_sizes(spec_);
  const auto fans = base_fan_in(spec_);
  for (int layer = 1; layer <= 2; ++layer) {
    const std::string prefix = "hyper" + std::to_string(layer);
    add_dense(params_, prefix, signal_dim(layer), dy, init);
    const std::size_t out = layer_width(layer);
    Tensor& w2 = params_.add(prefix + ".W2", Tensor(dy, out));
    Tensor& b2 = params_.add(prefix + ".b2", Tensor(1, out));
    const std::size_t wi = layer == 1 ? 0 : 2;
    const std::size_t nw = sizes[wi], nb = sizes[wi + 1];
    std::vector<OutputBlock> blocks;
    if (stochastic) {
      // [mu_W, rho_W, mu_b, rho_b]
      blocks = {{0, nw, fans[wi]}, {nw, nw, 0.0}, {2 * nw, nb, fans[wi + 1]},
                {2 * nw + nb, nb, 0.0}};
    } else {
      blocks = {{0, nw, fans[wi]}, {nw, nb, fans[wi + 1]}};
    }
    init_hyper_output(w2, b2, blocks, spec_.rho_init, dy, init);
  }
}

std::size_t FdnModel::signal_dim(int layer) const {
  return layer == 2 && layer_propagated() ? static_cast<std::size_t>(spec_.d_hid) : 1;
}

std::size_t FdnModel::layer_width(int layer) const {
  const std::size_t mult = spec_.kind == ModelKind::det_hyper ? 1 : 2;
  return mult * (layer == 1 ? layer1_width(spec_) : layer2_width(spec_));
}

Var FdnModel::hyper(ad::Tape& tape, Var signal, int layer) const {
  const std::string p = "hyper" + std::to_string(layer);
  Var u = activate(ad::matmul(signal, tape.param(params_, p + ".W1")) + tape.param(params_, p + ".b1"),
                   spec_.activation);
  return ad::matmul(u, tape.param(params_, p + ".W2")) + tape.param(params_, p + ".b2");
}

namespace {

struct LayerParams {
  Var mu_w, sigma_w, mu_b, sigma_b;
};

LayerParams split_layer(Var o, std::size_t nw, std::size_t nb, bool stochastic,
                        const std::optional<double>& rho_override) {
  LayerParams lp;
  if (!stochastic) {
    lp.mu_w = ad::slice_cols(o, 0, nw);
    lp.mu_b = ad::slice_cols(o, nw, nb);
    return lp;
  }
  lp.mu_w = ad::slice_cols(o, 0, nw);
  lp.mu_b = ad::slice_cols(o, 2 * nw, nb);
  if (rho_override) {
    ad::Tape& t = o.tape();
    const double s = prob::kSigmaFloor + ad::softplus(*rho_override);
    lp.sigma_w = t.constant(Tensor(o.rows(), nw, s));
    lp.sigma_b = t.constant(Tensor(o.rows(), nb, s));
  } else {
    lp.sigma_w = posterior_sigma(ad::slice_cols(o, nw, nw));
    lp.sigma_b = posterior_sigma(ad::slice_cols(o, 2 * nw + nb, nb));
  }
  return lp;
}

Var layer_kl(const LayerParams& lp, double sigma0) {
  return prob::kl_diag_gaussian_rows(lp.mu_w, lp.sigma_w, sigma0) +
         prob::kl_diag_gaussian_rows(lp.mu_b, lp.sigma_b, sigma0);
}

}  // namespace

LayerPosterior FdnModel::hypernet_forward(std::span<const double> signal, int layer) const {
  if (layer != 1 && layer != 2) throw std::invalid_argument("hypernet_forward: layer must be 1 or 2");
  if (signal.size() != signal_dim(layer)) {
    throw std::invalid_argument("hypernet_forward: signal has dimension " +
                                std::to_string(signal.size()) + ", layer " +
                                std::to_string(layer) + " expects " +
                                std::to_string(signal_dim(layer)));
  }
  if (spec_.kind == ModelKind::det_hyper) {
    throw std::logic_error("hypernet_forward: deterministic hypernetwork has no posterior");
  }
  ad::Tape tape(false);
  Var s = tape.constant(Tensor(1, signal.size(), std::vector<double>(signal.begin(), signal.end())));
  const auto sizes = base_sizes(spec_);
  const std::size_t wi = layer == 1 ? 0 : 2;
  LayerParams lp = split_layer(hyper(tape, s, layer), sizes[wi], sizes[wi + 1], true, rho_override_);
  LayerPosterior post{lp.mu_w.value(), lp.sigma_w.value(), lp.mu_b.value(), lp.sigma_b.value()};
  post.validate();
  return post;
}

ForwardOutput FdnModel::forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                                bool need_density, NoiseLayout layout) const {
  const bool stochastic_layout = spec_.kind != ModelKind::det_hyper;
  const bool sample = !deterministic();
  if (!sample) samples = 1;
  const std::size_t n = x.rows();
  const std::size_t rows = n * samples;
  const auto sizes = base_sizes(spec_);
  const double s0 = spec_.prior_sigma0;
  DensityAccumulator dens{need_density && sample, s0, {}, {}};

  Var xv = tape.constant(x);
  Var xr = ad::repeat_rows(xv, samples);

  // Layer 1 conditions on x for both variants: compute once per input.
  LayerParams l1 = split_layer(hyper(tape, xv, 1), sizes[0], sizes[1], stochastic_layout,
                               rho_override_);
  Var w1, b1;
  Var kl;
  if (sample) {
    kl = layer_kl(l1, s0);
    w1 = draw(ad::repeat_rows(l1.mu_w, samples), ad::repeat_rows(l1.sigma_w, samples), rows,
              samples, layout, noise, dens);
    b1 = draw(ad::repeat_rows(l1.mu_b, samples), ad::repeat_rows(l1.sigma_b, samples), rows,
              samples, layout, noise, dens);
  } else {
    w1 = l1.mu_w;
    b1 = l1.mu_b;
  }
  Var a1 = base_hidden(xr, w1, b1, spec_.activation);
  for (double v : a1.value().data()) {
    if (!std::isfinite(v)) throw std::runtime_error("fdn_forward: non-finite activation in layer 1");
  }

  Var w2, b2;
  if (layer_propagated()) {
    // Layer 2 conditions on the sampled activation of each path.
    LayerParams l2 = split_layer(hyper(tape, a1, 2), sizes[2], sizes[3], stochastic_layout,
                                 rho_override_);
    if (sample) {
      kl = kl + ad::group_mean_rows(layer_kl(l2, s0), samples);
      w2 = draw(l2.mu_w, l2.sigma_w, rows, samples, layout, noise, dens);
      b2 = draw(l2.mu_b, l2.sigma_b, rows, samples, layout, noise, dens);
    } else {
      w2 = l2.mu_w;
      b2 = l2.mu_b;
    }
  } else {
    LayerParams l2 = split_layer(hyper(tape, xv, 2), sizes[2], sizes[3], stochastic_layout,
                                 rho_override_);
    if (sample) {
      kl = kl + layer_kl(l2, s0);
      w2 = draw(ad::repeat_rows(l2.mu_w, samples), ad::repeat_rows(l2.sigma_w, samples), rows,
                samples, layout, noise, dens);
      b2 = draw(ad::repeat_rows(l2.mu_b, samples), ad::repeat_rows(l2.sigma_b, samples), rows,
                samples, layout, noise, dens);
    } else {
      w2 = ad::repeat_rows(l2.mu_w, samples);
      b2 = ad::repeat_rows(l2.mu_b, samples);
    }
  }
  HeadOut head = base_head(a1, w2, b2, spec_);
  for (double v : head.mean.value().data()) {
    if (!std::isfinite(v)) throw std::runtime_error("fdn_forward: non-finite activation in layer 2");
  }
  ForwardOutput out;
  out.means = head.mean;
  out.variances = head.variance;
  out.samples = samples;
  out.has_kl = sample;
  out.kl = sample ? kl : zeros_column(tape, n);
  if (need_density && !sample) zero_density(out, tape);
  return finish(out, dens);
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Model> make_model(const ModelSpec& spec, Rng& init) {
  switch (spec.kind) {
    case ModelKind::mlp_dropout: return std::make_unique<MlpModel>(spec, init);
    case ModelKind::deep_ensemble: return std::make_unique<EnsembleModel>(spec, init);
    case ModelKind::bayes: return std::make_unique<BayesModel>(spec, init);
    case ModelKind::gauss_hyper: return std::make_unique<GaussHyperModel>(spec, init);
    case ModelKind::ic_fdn:
    case ModelKind::lp_fdn:
    case ModelKind::det_hyper: return std::make_unique<FdnModel>(spec, init);
  }
  throw std::invalid_argument("make_model: unknown kind");
}

std::unique_ptr<Model> make_model(const ModelSpec& spec) {
  Rng rng(0);
  return make_model(spec, rng);
}

}  // namespace fdn
