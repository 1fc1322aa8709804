#include "fdn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace fdn {

void Adam::step(ParamStore& params, const ad::GradMap& grads, long t) {
  if (t < 1) throw std::invalid_argument("Adam::step: step index must be >= 1");
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) {
      throw std::invalid_argument("Adam::step: gradient for unknown parameter '" + name + "'");
    }
    if (!g.same_shape(params.at(name))) {
      throw std::invalid_argument("Adam::step: gradient shape mismatch for '" + name + "'");
    }
    if (!g.all_finite()) {
      throw std::runtime_error("Adam::step: non-finite gradient for parameter '" + name + "'");
    }
  }
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    Moments& mom = state_[name];
    if (mom.m.size() != p.size()) {
      mom.m = Tensor(p.rows(), p.cols());
      mom.v = Tensor(p.rows(), p.cols());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      mom.m[i] = opts_.beta1 * mom.m[i] + (1.0 - opts_.beta1) * g[i];
      mom.v[i] = opts_.beta2 * mom.v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      p[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

}  // namespace fdn
