#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdn/autodiff.hpp"
#include "fdn/config.hpp"
#include "fdn/gradcheck.hpp"
#include "fdn/metrics.hpp"
#include "fdn/models.hpp"
#include "fdn/tasks.hpp"

namespace fdn {

struct RunRecord {
  std::string hash;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint;
  ModelKind model = ModelKind::ic_fdn;
  TaskKind task = TaskKind::sine;
  std::size_t param_count = 0;
  // One entry per validation (one per epoch; per ensemble round for ensembles).
  std::vector<double> val_trace;
  // One entry per parameter update.
  std::vector<double> loss_trace;
  std::vector<double> beta_trace;
  int best_epoch = 0;
  long updates = 0;
  MetricsReport report;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, long step, const std::string& detail);
  int epoch() const { return epoch_; }
  long step() const { return step_; }

 private:
  int epoch_;
  long step_;
};

struct TrainedRun {
  RunRecord record;
  std::unique_ptr<Model> model;  // restored to the best validation epoch
  Dataset data;
  Evaluation evaluation;
};

// Independent named streams derived from the run seed.
Rng run_stream(std::uint64_t seed, const char* label);

// Scalar minibatch objective from one forward pass: the beta-ELBO
// (mean over the batch of -mean_k loglik + beta * KL) or the IWAE bound.
ad::Var objective_from_forward(ad::Tape& tape, const ForwardOutput& fo, const Tensor& y,
                               const ExperimentConfig& cfg, double beta);

// Mean squared error of the K-sample predictive mean on the ID test grid,
// with noise drawn from `noise`.
double validation_mse(const Model& model, const Dataset& data, std::size_t k_val, Rng noise);

// Trains one model per the config: budget check, minibatch Adam updates with
// the beta ramp advancing per update, validation after each epoch and
// restoration of the best epoch, then test evaluation with K_test.
// Throws BudgetError before training and TrainingDiverged on a non-finite
// loss or gradient.
TrainedRun train(const ExperimentConfig& cfg, std::uint64_t seed);

// Finite-difference check of the training objective for cfg.model on a
// random batch with frozen noise. Ensembles are checked through member 0.
GradCheckReport model_grad_check(const ExperimentConfig& cfg, std::uint64_t seed,
                                 std::size_t batch = 4, double beta = 0.5);

}  // namespace fdn
