#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdn/models.hpp"
#include "fdn/prob.hpp"
#include "fdn/tasks.hpp"

namespace fdn {

enum class Objective { beta_elbo, iwae };
enum class Likelihood { homoscedastic, heteroscedastic };

std::string to_string(Objective o);
std::string to_string(Likelihood l);
Objective parse_objective(std::string_view name);
Likelihood parse_likelihood(std::string_view name);

// One experiment. Defaults reproduce the training table: an empty config
// file yields exactly these values.
struct ExperimentConfig {
  TaskSpec task = TaskSpec::preset(TaskKind::sine);
  ModelSpec model = ModelSpec::preset(ModelKind::ic_fdn);
  int epochs = 400;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t k_train = 1;
  std::size_t k_val = 100;
  std::size_t k_test = 100;
  prob::BetaSchedule beta;
  Objective objective = Objective::beta_elbo;
  Likelihood likelihood = Likelihood::homoscedastic;
  std::vector<std::uint64_t> seeds{7, 8, 9};
  std::filesystem::path output_dir = "out";

  void validate() const;
  // Epochs each ensemble member trains: epochs / M, at least 1.
  int member_epochs() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg, int indent = 2);

// Content hash of everything that affects one run's results (seeds and
// output_dir excluded, the run seed included). Independent of key order in
// the source file. 16 hex digits.
std::string run_hash(const ExperimentConfig& cfg, std::uint64_t seed);

// Benchmark matrix: the base config crossed with model and task lists.
struct SuiteConfig {
  ExperimentConfig base;
  std::vector<ModelSpec> models;
  std::vector<TaskSpec> tasks;
};

struct RunSpec {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string hash;
};

// Keys as in ExperimentConfig plus optional "models" and "tasks" arrays whose
// entries are kind names or objects of overrides. Missing lists default to
// the six benchmark models and the three tasks.
SuiteConfig parse_suite_config(const std::string& json_text);
SuiteConfig load_suite_config(const std::filesystem::path& path);
std::vector<ModelKind> benchmark_models();
// model-major, then task, then seed.
std::vector<RunSpec> expand(const SuiteConfig& suite);

}  // namespace fdn
