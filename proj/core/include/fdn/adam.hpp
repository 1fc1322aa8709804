#pragma once

#include <map>
#include <string>

#include "fdn/autodiff.hpp"
#include "fdn/param_store.hpp"

namespace fdn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers persist across step() calls and
// are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  // Applies one update with step index t >= 1. Parameters without an entry in
  // grads are left untouched. Throws on a non-finite gradient, naming the
  // offending parameter, before modifying anything.
  void step(ParamStore& params, const ad::GradMap& grads, long t);

  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamOptions opts_;
  std::map<std::string, Moments> state_;
};

}  // namespace fdn
