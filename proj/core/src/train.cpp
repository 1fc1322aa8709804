#include "fdn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "fdn/adam.hpp"

namespace fdn {

TrainingDiverged::TrainingDiverged(int epoch, long step, const std::string& detail)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + ": " + detail),
      epoch_(epoch),
      step_(step) {}

Rng run_stream(std::uint64_t seed, const char* label) { return Rng(seed).derive(label); }

ad::Var objective_from_forward(ad::Tape& tape, const ForwardOutput& fo, const Tensor& y,
                               const ExperimentConfig& cfg, double beta) {
  const std::size_t s = fo.samples;
  ad::Var yr = ad::repeat_rows(tape.constant(y), s);
  ad::Var ll = cfg.model.heteroscedastic
                   ? prob::gaussian_loglik(yr, fo.means, fo.variances)
                   : prob::gaussian_loglik(yr, fo.means, cfg.model.obs_variance);
  if (cfg.objective == Objective::iwae) {
    ad::Var w = ll;
    if (fo.log_q.valid()) w = w + fo.log_prior - fo.log_q;
    return -ad::mean(ad::group_logmeanexp_rows(w, s));
  }
  ad::Var per = -ad::group_mean_rows(ll, s);
  if (fo.has_kl && beta != 0.0) per = per + beta * fo.kl;
  return ad::mean(per);
}

double validation_mse(const Model& model, const Dataset& data, std::size_t k_val, Rng noise) {
  const auto xs = data.xs(Split::test_id);
  const auto ys = data.ys(Split::test_id);
  const auto preds = model.predict(xs, k_val, noise, 8);
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double m = predictive_moments(preds[i].mixture).mean;
    acc += (ys[i] - m) * (ys[i] - m);
  }
  return acc / static_cast<double>(xs.size());
}

namespace {

struct Batch {
  Tensor x;
  Tensor y;
};

std::vector<Batch> make_batches(const std::vector<double>& xs, const std::vector<double>& ys,
                                std::size_t batch, Rng& shuffle) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t n = std::min(batch, order.size() - start);
    Batch b{Tensor(n, 1), Tensor(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
      b.x[i] = xs[order[start + i]];
      b.y[i] = ys[order[start + i]];
    }
    out.push_back(std::move(b));
  }
  return out;
}

class Loop {
 public:
  Loop(const ExperimentConfig& cfg, std::uint64_t seed, Model& model, const Dataset& data)
      : cfg_(cfg),
        model_(model),
        data_(data),
        seed_(seed),
        shuffle_(run_stream(seed, "shuffle")),
        noise_(run_stream(seed, "noise")),
        train_x_(data.xs(Split::train)),
        train_y_(data.ys(Split::train)) {}

  // One epoch over the training set; `forward` builds the forward pass for a batch.
  template <class Forward>
  void epoch(int e, Adam& adam, long& local_t, Forward&& forward) {
    for (auto& b : make_batches(train_x_, train_y_, cfg_.batch_size, shuffle_)) {
      const double beta = prob::beta_at(rec.updates, cfg_.beta);
      ++rec.updates;
      ++local_t;
      try {
        ad::Tape tape;
        ForwardOutput fo = forward(tape, b.x);
        ad::Var loss = objective_from_forward(tape, fo, b.y, cfg_, beta);
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) throw std::runtime_error("non-finite loss");
        ad::GradMap grads = tape.backward(loss);
        adam.step(model_.params(), grads, local_t);
        rec.loss_trace.push_back(lv);
        rec.beta_trace.push_back(beta);
      } catch (const TrainingDiverged&) {
        throw;
      } catch (const std::runtime_error& err) {
        throw TrainingDiverged(e, rec.updates, err.what());
      }
    }
  }

  void validate(int e) {
    const double mse = validation_mse(model_, data_, cfg_.k_val, run_stream(seed_, "val"));
    rec.val_trace.push_back(mse);
    if (!best_ || mse < best_mse_) {
      best_ = model_.params();
      best_mse_ = mse;
      rec.best_epoch = e;
    }
  }

  void restore_best() {
    if (best_) model_.params() = *best_;
  }

  Rng& noise() { return noise_; }

  RunRecord rec;

 private:
  const ExperimentConfig& cfg_;
  Model& model_;
  const Dataset& data_;
  std::uint64_t seed_;
  Rng shuffle_;
  Rng noise_;
  std::vector<double> train_x_;
  std::vector<double> train_y_;
  std::optional<ParamStore> best_;
  double best_mse_ = 0.0;
};

}  // namespace

TrainedRun train(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require_budget(cfg.model);

  TrainedRun run;
  Rng data_rng = run_stream(seed, "data");
  run.data = make_dataset(cfg.task, data_rng);
  Rng init = run_stream(seed, "init");
  run.model = make_model(cfg.model, init);

  Loop loop(cfg, seed, *run.model, run.data);
  const AdamOptions opts{cfg.lr};

  if (auto* ens = dynamic_cast<EnsembleModel*>(run.model.get())) {
    // Epoch-split: members take turns, one epoch each per round, for
    // epochs / M rounds; the whole ensemble is validated after each round.
    std::vector<Adam> adams(ens->members(), Adam(opts));
    std::vector<long> steps(ens->members(), 0);
    for (int e = 0; e < cfg.member_epochs(); ++e) {
      for (std::size_t m = 0; m < ens->members(); ++m) {
        loop.epoch(e, adams[m], steps[m], [&](ad::Tape& tape, const Tensor& x) {
          return ens->member_forward(tape, m, x);
        });
        ens->mark_trained(m);
      }
      loop.validate(e);
    }
  } else {
    Adam adam(opts);
    long t = 0;
    const Model& model = *run.model;
    for (int e = 0; e < cfg.epochs; ++e) {
      loop.epoch(e, adam, t, [&](ad::Tape& tape, const Tensor& x) {
        return model.forward(tape, x, cfg.k_train, loop.noise(),
                             cfg.objective == Objective::iwae);
      });
      loop.validate(e);
    }
  }
  loop.restore_best();

  Rng test = run_stream(seed, "test");
  run.evaluation = evaluate_model(*run.model, run.data, cfg.k_test, test);

  run.record = std::move(loop.rec);
  run.record.hash = run_hash(cfg, seed);
  run.record.seed = seed;
  run.record.model = cfg.model.kind;
  run.record.task = cfg.task.kind;
  run.record.param_count = count_params(cfg.model);
  run.record.report = run.evaluation.report;
  return run;
}

GradCheckReport model_grad_check(const ExperimentConfig& cfg, std::uint64_t seed,
                                 std::size_t batch, double beta) {
  Rng init = run_stream(seed, "init");
  auto model = make_model(cfg.model, init);
  Rng data = run_stream(seed, "data");
  Tensor x(batch, 1), y(batch, 1);
  for (std::size_t i = 0; i < batch; ++i) {
    x[i] = data.uniform(-cfg.task.l, cfg.task.l);
    y[i] = cfg.task.target(x[i]);
  }
  auto* ens = dynamic_cast<EnsembleModel*>(model.get());
  const LossFn loss = [&](ad::Tape& tape, const ParamStore&) {
    Rng noise = run_stream(seed, "noise");
    ForwardOutput fo = ens ? ens->member_forward(tape, 0, x)
                           : model->forward(tape, x, cfg.k_train, noise,
                                            cfg.objective == Objective::iwae);
    return objective_from_forward(tape, fo, y, cfg, beta);
  };
  // Central-difference roundoff grows with |loss| (~1e-9 at |loss| ~ 200), so
  // entries below a loss-scaled floor are compared on an absolute scale.
  double scale = 1.0;
  {
    ad::Tape tape;
    scale = std::max(scale, std::abs(loss(tape, model->params()).value().item()));
  }
  return grad_check(loss, model->params(), 1e-5, 1e-4, 1e-6 * scale);
}

}  // namespace fdn
