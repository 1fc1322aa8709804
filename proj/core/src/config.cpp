#include "fdn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json_io.hpp"

namespace fdn {

std::string to_string(Objective o) { return o == Objective::beta_elbo ? "beta_elbo" : "iwae"; }

std::string to_string(Likelihood l) {
  return l == Likelihood::homoscedastic ? "homoscedastic" : "heteroscedastic";
}

Objective parse_objective(std::string_view name) {
  if (name == "beta_elbo") return Objective::beta_elbo;
  if (name == "iwae") return Objective::iwae;
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

Likelihood parse_likelihood(std::string_view name) {
  if (name == "homoscedastic") return Likelihood::homoscedastic;
  if (name == "heteroscedastic") return Likelihood::heteroscedastic;
  throw std::invalid_argument("unknown likelihood '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  task.validate();
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
  if (k_train < 1 || k_val < 1 || k_test < 1) {
    throw std::invalid_argument("config: Monte Carlo sample counts must be >= 1");
  }
  if (beta.beta_max < 0.0 || beta.warmup_updates < 0) {
    throw std::invalid_argument("config: beta schedule must be non-negative");
  }
  if (model.heteroscedastic != (likelihood == Likelihood::heteroscedastic)) {
    throw std::invalid_argument("config: model.heteroscedastic disagrees with likelihood");
  }
}

int ExperimentConfig::member_epochs() const {
  if (model.kind != ModelKind::deep_ensemble) return epochs;
  return std::max(1, epochs / std::max(1, model.ensemble_size));
}

namespace detail {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(std::string(where) + ": unknown key '" + key + "'");
  }
}

namespace {

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const ModelSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"d_hid", s.d_hid},
          {"d_hyper", s.d_hyper},
          {"d_h", s.d_h},
          {"ensemble_size", s.ensemble_size},
          {"dropout_p", s.dropout_p},
          {"target_params", s.target_params},
          {"tolerance", s.tolerance},
          {"enforce_budget", s.enforce_budget},
          {"activation", to_string(s.activation)},
          {"heteroscedastic", s.heteroscedastic},
          {"prior_sigma0", s.prior_sigma0},
          {"rho_init", s.rho_init},
          {"obs_variance", s.obs_variance}};
}

ModelSpec model_spec_from_json(const json& j) {
  if (j.is_string()) return ModelSpec::preset(parse_model_kind(j.get<std::string>()));
  reject_unknown(j,
                 {"kind", "d_hid", "d_hyper", "d_h", "ensemble_size", "dropout_p", "target_params",
                  "tolerance", "enforce_budget", "activation", "heteroscedastic", "prior_sigma0",
                  "rho_init", "obs_variance"},
                 "model");
  if (!j.contains("kind")) throw std::invalid_argument("model: missing 'kind'");
  ModelSpec s = ModelSpec::preset(parse_model_kind(j.at("kind").get<std::string>()));
  read(j, "d_hid", s.d_hid);
  read(j, "d_hyper", s.d_hyper);
  read(j, "d_h", s.d_h);
  read(j, "ensemble_size", s.ensemble_size);
  read(j, "dropout_p", s.dropout_p);
  read(j, "target_params", s.target_params);
  read(j, "tolerance", s.tolerance);
  read(j, "enforce_budget", s.enforce_budget);
  if (j.contains("activation")) s.activation = parse_activation(j.at("activation").get<std::string>());
  read(j, "heteroscedastic", s.heteroscedastic);
  read(j, "prior_sigma0", s.prior_sigma0);
  read(j, "rho_init", s.rho_init);
  read(j, "obs_variance", s.obs_variance);
  return s;
}

json to_json(const TaskSpec& s) {
  return {{"kind", to_string(s.kind)}, {"amplitude", s.amplitude}, {"frequency", s.frequency},
          {"curvature", s.curvature},  {"offset", s.offset},       {"l", s.l},
          {"L", s.L},                  {"n_train", s.n_train},     {"n_test_id", s.n_test_id},
          {"n_test_ood", s.n_test_ood}};
}

TaskSpec task_spec_from_json(const json& j) {
  if (j.is_string()) return TaskSpec::preset(parse_task_kind(j.get<std::string>()));
  reject_unknown(j,
                 {"kind", "amplitude", "frequency", "curvature", "offset", "l", "L", "n_train",
                  "n_test_id", "n_test_ood"},
                 "task");
  if (!j.contains("kind")) throw std::invalid_argument("task: missing 'kind'");
  TaskSpec s = TaskSpec::preset(parse_task_kind(j.at("kind").get<std::string>()));
  read(j, "amplitude", s.amplitude);
  read(j, "frequency", s.frequency);
  read(j, "curvature", s.curvature);
  read(j, "offset", s.offset);
  read(j, "l", s.l);
  read(j, "L", s.L);
  read(j, "n_train", s.n_train);
  read(j, "n_test_id", s.n_test_id);
  read(j, "n_test_ood", s.n_test_ood);
  s.validate();
  return s;
}

json to_json(const ExperimentConfig& c) {
  return {{"task", to_json(c.task)},
          {"model", to_json(c.model)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"k_train", c.k_train},
          {"k_val", c.k_val},
          {"k_test", c.k_test},
          {"beta", {{"beta_max", c.beta.beta_max}, {"warmup_updates", c.beta.warmup_updates}}},
          {"objective", to_string(c.objective)},
          {"likelihood", to_string(c.likelihood)},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir.string()}};
}

namespace {

const std::initializer_list<const char*> kConfigKeys = {
    "task",    "model",      "epochs",     "batch_size", "lr",    "k_train",   "k_val",
    "k_test",  "beta",       "objective",  "likelihood", "seeds", "output_dir"};

void read_config_fields(const json& j, ExperimentConfig& c) {
  if (j.contains("task")) c.task = task_spec_from_json(j.at("task"));
  if (j.contains("model")) c.model = model_spec_from_json(j.at("model"));
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.lr);
  read(j, "k_train", c.k_train);
  read(j, "k_val", c.k_val);
  read(j, "k_test", c.k_test);
  if (j.contains("beta")) {
    const auto& b = j.at("beta");
    reject_unknown(b, {"beta_max", "warmup_updates"}, "beta");
    read(b, "beta_max", c.beta.beta_max);
    read(b, "warmup_updates", c.beta.warmup_updates);
  }
  if (j.contains("objective")) c.objective = parse_objective(j.at("objective").get<std::string>());
  if (j.contains("likelihood")) {
    c.likelihood = parse_likelihood(j.at("likelihood").get<std::string>());
  }
  c.model.heteroscedastic = c.likelihood == Likelihood::heteroscedastic;
  read(j, "seeds", c.seeds);
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j, kConfigKeys, "config");
  ExperimentConfig c;
  read_config_fields(j, c);
  c.validate();
  return c;
}

}  // namespace detail

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json parse_object(const std::string& text) {
  auto j = text.find_first_not_of(" \t\r\n") == std::string::npos ? nlohmann::json::object()
                                                                  : nlohmann::json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  return detail::config_from_json(parse_object(json_text));
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(slurp(path)); }

std::string config_to_json(const ExperimentConfig& cfg, int indent) {
  return detail::to_json(cfg).dump(indent);
}

std::string run_hash(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto j = detail::to_json(cfg);
  j.erase("seeds");
  j.erase("output_dir");
  j["seed"] = seed;
  // nlohmann objects are key-sorted, so the dump is canonical.
  const std::string canon = j.dump();
  std::uint64_t h = mix64(hash_label(canon));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<ModelKind> benchmark_models() {
  return {ModelKind::mlp_dropout, ModelKind::deep_ensemble, ModelKind::bayes,
          ModelKind::gauss_hyper, ModelKind::ic_fdn,        ModelKind::lp_fdn};
}

SuiteConfig parse_suite_config(const std::string& json_text) {
  auto j = parse_object(json_text);
  SuiteConfig s;
  // An absent list means the benchmark defaults; an explicit empty list stays empty.
  const bool default_models = !j.contains("models"), default_tasks = !j.contains("tasks");
  nlohmann::json models = default_models ? nlohmann::json::array() : j.at("models");
  nlohmann::json tasks = default_tasks ? nlohmann::json::array() : j.at("tasks");
  j.erase("models");
  j.erase("tasks");
  s.base = detail::config_from_json(j);
  if (!models.is_array() || !tasks.is_array()) {
    throw std::invalid_argument("suite: 'models' and 'tasks' must be arrays");
  }
  if (default_models) {
    for (ModelKind k : benchmark_models()) s.models.push_back(ModelSpec::preset(k));
  } else {
    for (const auto& m : models) s.models.push_back(detail::model_spec_from_json(m));
  }
  if (default_tasks) {
    for (TaskKind k : {TaskKind::step, TaskKind::sine, TaskKind::quadratic}) {
      s.tasks.push_back(TaskSpec::preset(k));
    }
  } else {
    for (const auto& t : tasks) s.tasks.push_back(detail::task_spec_from_json(t));
  }
  for (auto& m : s.models) m.heteroscedastic = s.base.likelihood == Likelihood::heteroscedastic;
  return s;
}

SuiteConfig load_suite_config(const std::filesystem::path& path) {
  return parse_suite_config(slurp(path));
}

std::vector<RunSpec> expand(const SuiteConfig& suite) {
  std::vector<RunSpec> runs;
  for (const auto& m : suite.models) {
    for (const auto& t : suite.tasks) {
      for (std::uint64_t seed : suite.base.seeds) {
        RunSpec r;
        r.config = suite.base;
        r.config.model = m;
        r.config.task = t;
        r.seed = seed;
        r.hash = run_hash(r.config, seed);
        runs.push_back(std::move(r));
      }
    }
  }
  return runs;
}

}  // namespace fdn
