#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fdn/autodiff.hpp"
#include "fdn/param_store.hpp"
#include "fdn/prob.hpp"
#include "fdn/rng.hpp"

namespace fdn {

enum class ModelKind { mlp_dropout, deep_ensemble, bayes, gauss_hyper, ic_fdn, lp_fdn, det_hyper };
enum class Activation { tanh, relu };

std::string to_string(ModelKind kind);
std::string to_string(Activation act);
ModelKind parse_model_kind(std::string_view name);
Activation parse_activation(std::string_view name);
// Display names used in tables and plot legends.
std::string display_name(ModelKind kind);

struct ModelSpec {
  ModelKind kind = ModelKind::ic_fdn;
  int d_hid = 23;
  int d_hyper = 6;
  int d_h = 0;
  int ensemble_size = 1;
  double dropout_p = 0.1;
  long target_params = 1000;
  double tolerance = 0.05;
  // Ensembles keep their table widths and equalise updates by epoch-split
  // instead of matching the parameter budget.
  bool enforce_budget = true;
  Activation activation = Activation::relu;
  // Adds a per-sample observation-variance head to the base network.
  bool heteroscedastic = false;
  double prior_sigma0 = 1.0;
  // Initial value of every rho (posterior scale pre-activation) output.
  double rho_init = -3.0;
  // Fixed observation variance of the homoscedastic likelihood.
  double obs_variance = 1.0;

  // Widths from the model grid for each kind.
  static ModelSpec preset(ModelKind kind);
};

struct BudgetVerdict {
  std::size_t count = 0;
  long target = 0;
  double rel_deviation = 0.0;
  bool within = false;
};

class BudgetError : public std::runtime_error {
 public:
  explicit BudgetError(const BudgetVerdict& v);
  const BudgetVerdict& verdict() const { return verdict_; }

 private:
  BudgetVerdict verdict_;
};

// Exact trainable-parameter count for a spec, hypernetwork weights included.
std::size_t count_params(const ModelSpec& spec);
BudgetVerdict check_budget(const ModelSpec& spec);
// Throws BudgetError when the spec enforces its budget and misses it.
void require_budget(const ModelSpec& spec);

// Per-layer diagonal Gaussian over a base layer's weights and biases.
struct LayerPosterior {
  Tensor mu_w;
  Tensor sigma_w;
  Tensor mu_b;
  Tensor sigma_b;

  void validate() const;
};

struct LayerSample {
  Tensor w;
  Tensor b;
};

// Reparameterised draw W = mu + sigma * z with z ~ N(0, I).
LayerSample sample_layer(const LayerPosterior& post, Rng& rng);
// Differentiable form with a frozen noise tensor.
ad::Var reparameterize(ad::Var mu, ad::Var sigma, const Tensor& z);
// sigma = floor + softplus(rho)
ad::Var posterior_sigma(ad::Var rho);

// Uniform mixture of K Gaussians approximating p(y | x).
struct PredictiveMixture {
  std::vector<double> means;
  std::vector<double> variances;

  std::size_t size() const { return means.size(); }
  double weight() const { return 1.0 / static_cast<double>(means.size()); }
  void validate() const;
};

struct PredictiveMoments {
  double mean = 0.0;
  double var_epistemic = 0.0;
  double var_total = 0.0;
};

// Law-of-total-variance decomposition of a mixture.
PredictiveMoments predictive_moments(const PredictiveMixture& mix);

struct ForwardOutput {
  ad::Var means;      // (n * samples) x 1, row i * samples + k
  ad::Var variances;  // (n * samples) x 1 when heteroscedastic
  ad::Var kl;         // n x 1 per-input KL
  ad::Var log_prior;  // (n * samples) x 1 when densities were requested
  ad::Var log_q;
  std::size_t samples = 1;
  bool has_kl = false;
};

struct Prediction {
  PredictiveMixture mixture;
  double kl = 0.0;
};

// How weight noise is laid out across the inputs of one forward call.
// per_input draws fresh noise for every (input, path) row. shared reuses the
// K path draws for every input: each input still sees K independent draws
// from its own posterior, at a fraction of the sampling cost (inference).
enum class NoiseLayout { per_input, shared };

// Common interface: every model maps x to a K-component predictive mixture
// and a KL term (zero for models without a weight posterior).
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~Model() = default;

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // x is n x 1. `noise` feeds weight draws and dropout masks.
  virtual ForwardOutput forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                                bool need_density = false,
                                NoiseLayout layout = NoiseLayout::per_input) const = 0;

  Prediction predict(double x, std::size_t samples, Rng& noise) const;
  // Non-recording evaluation in chunks of `chunk` inputs with the shared
  // noise layout. Results do not depend on the chunk size.
  std::vector<Prediction> predict(std::span<const double> xs, std::size_t samples, Rng& noise,
                                  std::size_t chunk = 16) const;

 protected:
  ModelSpec spec_;
  ParamStore params_;
};

class MlpModel final : public Model {
 public:
  MlpModel(ModelSpec spec, Rng& init);
  ForwardOutput forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                        bool need_density = false,
                        NoiseLayout layout = NoiseLayout::per_input) const override;
};

class EnsembleModel final : public Model {
 public:
  EnsembleModel(ModelSpec spec, Rng& init);

  std::size_t members() const { return static_cast<std::size_t>(spec_.ensemble_size); }
  std::string member_prefix(std::size_t m) const;
  // Forward through one member only; K = 1.
  ForwardOutput member_forward(ad::Tape& tape, std::size_t m, const Tensor& x) const;
  // Mixture over all members; `samples` is ignored (K = M). Throws when any
  // member is still untrained.
  ForwardOutput forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                        bool need_density = false,
                        NoiseLayout layout = NoiseLayout::per_input) const override;

  void mark_trained(std::size_t m) { trained_.at(m) = true; }
  bool trained(std::size_t m) const { return trained_.at(m); }
  const std::vector<bool>& trained_flags() const { return trained_; }
  void set_trained_flags(std::vector<bool> flags);

 private:
  std::vector<bool> trained_;
};

class BayesModel final : public Model {
 public:
  BayesModel(ModelSpec spec, Rng& init);
  ForwardOutput forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                        bool need_density = false,
                        NoiseLayout layout = NoiseLayout::per_input) const override;
};

class GaussHyperModel final : public Model {
 public:
  GaussHyperModel(ModelSpec spec, Rng& init);
  ForwardOutput forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                        bool need_density = false,
                        NoiseLayout layout = NoiseLayout::per_input) const override;
  // Global posterior produced from the latent vector.
  LayerPosterior posterior(std::size_t layer) const;
};

// IC-FDN, LP-FDN and the deterministic hypernetwork (kind det_hyper).
class FdnModel final : public Model {
 public:
  FdnModel(ModelSpec spec, Rng& init);

  bool layer_propagated() const { return spec_.kind == ModelKind::lp_fdn; }
  bool deterministic() const { return spec_.kind == ModelKind::det_hyper || mean_only_; }

  // Posterior of base layer `layer` (1 or 2) for a single conditioning signal:
  // x for IC, the previous activation for LP layer 2.
  LayerPosterior hypernet_forward(std::span<const double> signal, int layer) const;

  ForwardOutput forward(ad::Tape& tape, const Tensor& x, std::size_t samples, Rng& noise,
                        bool need_density = false,
                        NoiseLayout layout = NoiseLayout::per_input) const override;

  // Replaces every rho output by a constant (e.g. -20 to collapse sigma to
  // the floor). Evaluation only.
  void set_rho_override(std::optional<double> rho) { rho_override_ = rho; }
  // Use the posterior means as weights: the deterministic hypernetwork the
  // model reduces to as sigma -> 0.
  void set_mean_only(bool on) { mean_only_ = on; }

 private:
  std::size_t signal_dim(int layer) const;
  std::size_t layer_width(int layer) const;
  ad::Var hyper(ad::Tape& tape, ad::Var signal, int layer) const;

  std::optional<double> rho_override_;
  bool mean_only_ = false;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec, Rng& init);
// Allocates a model with the spec's parameter layout without meaningful
// values; used when loading checkpoints.
std::unique_ptr<Model> make_model(const ModelSpec& spec);

}  // namespace fdn
