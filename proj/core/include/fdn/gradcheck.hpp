#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fdn/autodiff.hpp"
#include "fdn/param_store.hpp"

namespace fdn {

// Builds a scalar loss on the given tape from the parameters bound via
// tape.param(). Must be deterministic: any noise has to be drawn from an Rng
// constructed inside the function with a fixed seed.
using LossFn = std::function<ad::Var(ad::Tape&, const ParamStore&)>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  bool passed = true;
  double max_rel_error = 0.0;
};

// Compares reverse-mode gradients with central differences. The relative
// error of each entry is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, double eps = 1e-5,
                           double rtol = 1e-4, double abs_floor = 1e-6);

// Runs grad_check but substitutes `analytic` for the tape gradients; used to
// confirm the checker rejects wrong gradients.
GradCheckReport compare_gradients(const LossFn& loss_fn, ParamStore& params,
                                  const ad::GradMap& analytic, double eps = 1e-5,
                                  double rtol = 1e-4, double abs_floor = 1e-6);

}  // namespace fdn
