#include "fdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fdn {
namespace {

double evaluate(const LossFn& loss_fn, const ParamStore& params) {
  ad::Tape tape(false);
  const double v = loss_fn(tape, params).value().item();
  if (!std::isfinite(v)) throw std::runtime_error("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckReport compare_gradients(const LossFn& loss_fn, ParamStore& params,
                                  const ad::GradMap& analytic, double eps, double rtol,
                                  double abs_floor) {
  GradCheckReport report;
  evaluate(loss_fn, params);
  for (auto& [name, tensor] : params) {
    ParamCheck pc;
    pc.name = name;
    auto git = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + eps;
      const double up = evaluate(loss_fn, params);
      tensor[i] = saved - eps;
      const double down = evaluate(loss_fn, params);
      tensor[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = git == analytic.end() ? 0.0 : git->second[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (i == 0 || rel > pc.max_rel_error) {
        pc.max_rel_error = rel;
        pc.worst_index = i;
        pc.analytic = a;
        pc.numeric = numeric;
      }
    }
    pc.passed = pc.max_rel_error <= rtol;
    report.passed = report.passed && pc.passed;
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(pc);
  }
  return report;
}

GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, double eps, double rtol,
                           double abs_floor) {
  ad::GradMap analytic;
  {
    ad::Tape tape(true);
    ad::Var loss = loss_fn(tape, params);
    if (!std::isfinite(loss.value().item())) {
      throw std::runtime_error("grad_check: loss is not finite");
    }
    if (loss.requires_grad()) analytic = tape.backward(loss);
  }
  return compare_gradients(loss_fn, params, analytic, eps, rtol, abs_floor);
}

}  // namespace fdn
