#include "fdn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fdn/param_store.hpp"

namespace fdn::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(std::string name, Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.name = std::move(name);
  n.requires_grad = requires_grad && recording_;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return Var(this, it->second);
  Var v = leaf(name, store.at(name), true);
  bound_.emplace(name, v.id());
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const Var& p : parents) {
      if (p.tape_ != this) throw std::logic_error("Tape::record: operand from another tape");
      n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

Tensor Tape::grad_of(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.size() != n.value.size()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

GradMap Tape::backward(Var output) {
  if (output.tape_ != this) throw std::logic_error("Tape::backward: output from another tape");
  if (!output.value().is_scalar()) {
    throw std::invalid_argument("backward: output must be scalar, got shape " +
                                shape_string(output.value().shape()));
  }
  if (!nodes_[output.id_].requires_grad) {
    throw std::logic_error("backward: output is detached from every trainable leaf");
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad(output.id_)[0] = 1.0;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, i);
  }
  GradMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.leaf && n.requires_grad && !n.name.empty()) out[n.name] = grad_of(Var(this, i));
  }
  return out;
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

Tensor::Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

// Index of element (r, c) of the broadcast output inside an operand.
inline std::size_t bidx(const Tensor& t, std::size_t r, std::size_t c) {
  return (t.rows() == 1 ? 0 : r) * t.cols() + (t.cols() == 1 ? 0 : c);
}

// Sum an output-shaped gradient back into an operand's accumulator.
void accumulate_reduced(Tensor& acc, const Tensor& g) {
  if (acc.same_shape(g)) {
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    return;
  }
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) acc[bidx(acc, r, c)] += g(r, c);
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, Tensor::Shape s, F f) {
  Tensor out(s[0], s[1]);
  if (a.same_shape(b) && a.rows() == s[0] && a.cols() == s[1]) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (std::size_t r = 0; r < s[0]; ++r)
    for (std::size_t c = 0; c < s[1]; ++c) out(r, c) = f(a[bidx(a, r, c)], b[bidx(b, r, c)]);
  return out;
}

template <class F>
Var unary(Var a, F f, std::function<double(double x, double y)> dfdx) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, dfdx](Tape& t, std::size_t self) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    const Tensor& g = t.output_grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  auto s = broadcast_shape(a.value(), b.value(), "add");
  Tensor out = broadcast_apply(a.value(), b.value(), s, [](double x, double y) { return x + y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.requires_grad(ia)) accumulate_reduced(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate_reduced(t.grad(ib), g);
  });
}

Var sub(Var a, Var b) {
  auto s = broadcast_shape(a.value(), b.value(), "sub");
  Tensor out = broadcast_apply(a.value(), b.value(), s, [](double x, double y) { return x - y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.requires_grad(ia)) accumulate_reduced(t.grad(ia), g);
    if (t.requires_grad(ib)) {
      Tensor neg_g = g;
      for (double& v : neg_g.storage()) v = -v;
      accumulate_reduced(t.grad(ib), neg_g);
    }
  });
}

Var mul(Var a, Var b) {
  auto s = broadcast_shape(a.value(), b.value(), "mul");
  Tensor out = broadcast_apply(a.value(), b.value(), s, [](double x, double y) { return x * y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    auto s = g.shape();
    if (t.requires_grad(ia)) {
      Tensor ga = broadcast_apply(g, bv, s, [](double x, double y) { return x * y; });
      accumulate_reduced(t.grad(ia), ga);
    }
    if (t.requires_grad(ib)) {
      Tensor gb = broadcast_apply(g, av, s, [](double x, double y) { return x * y; });
      accumulate_reduced(t.grad(ib), gb);
    }
  });
}

Var div(Var a, Var b) {
  auto s = broadcast_shape(a.value(), b.value(), "div");
  Tensor out = broadcast_apply(a.value(), b.value(), s, [](double x, double y) { return x / y; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& bv = t.value(ib);
    const Tensor& y = t.value(self);
    auto s = g.shape();
    if (t.requires_grad(ia)) {
      Tensor ga = broadcast_apply(g, bv, s, [](double x, double d) { return x / d; });
      accumulate_reduced(t.grad(ia), ga);
    }
    if (t.requires_grad(ib)) {
      // d(a/b)/db = -y/b
      Tensor gb(s[0], s[1]);
      for (std::size_t r = 0; r < s[0]; ++r)
        for (std::size_t c = 0; c < s[1]; ++c)
          gb(r, c) = -g(r, c) * y(r, c) / bv[bidx(bv, r, c)];
      accumulate_reduced(t.grad(ib), gb);
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_string(av.shape()) +
                                " x " + shape_string(bv.shape()));
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      const double* brow = &bv(p, 0);
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);  // g * b^T
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g(i, j) * bv(p, j);
          ga(i, p) += s;
        }
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);  // a^T * g
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av(i, p);
          for (std::size_t j = 0; j < m; ++j) gb(p, j) += aip * g(i, j);
        }
    }
  });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  // exp-based form: about 4x cheaper than libm tanh, absolute error ~1e-16.
  return unary(a, [](double x) {
                 const double e = std::exp(-2.0 * std::fabs(x));
                 return std::copysign((1.0 - e) / (1.0 + e), x);
               },
               [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(a, [](double x) { return softplus(x); },
               [](double x, double) { return sigmoid(x); });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.output_grad(self)[0];
    for (double& v : t.grad(ia).storage()) v += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_cols(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av(r, c);
    out[r] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[r];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of " +
                                shape_string(av.shape()));
  }
  Tensor out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    std::copy_n(&av(r, begin), count, &out(r, 0));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, begin, count](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) += g(r, c);
  });
}

Var repeat_rows(Var a, std::size_t times) {
  if (times == 1) return a;
  const Tensor& av = a.value();
  Tensor out(av.rows() * times, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t k = 0; k < times; ++k)
      std::copy_n(&av(r, 0), av.cols(), &out(r * times + k, 0));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, times](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t k = 0; k < times; ++k)
        for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r * times + k, c);
  });
}

Var group_mean_rows(Var a, std::size_t group) {
  const Tensor& av = a.value();
  if (group == 0 || av.rows() % group != 0) {
    throw std::invalid_argument("group_mean_rows: " + std::to_string(av.rows()) +
                                " rows not divisible by group " + std::to_string(group));
  }
  if (group == 1) return a;
  const std::size_t n = av.rows() / group;
  Tensor out(n, av.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < group; ++k)
      for (std::size_t c = 0; c < av.cols(); ++c) out(i, c) += av(i * group + k, c) / group;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, group](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r / group, c) / group;
  });
}

Var group_logmeanexp_rows(Var a, std::size_t group) {
  const Tensor& av = a.value();
  if (av.cols() != 1) throw std::invalid_argument("group_logmeanexp_rows: expects a column");
  if (group == 0 || av.rows() % group != 0) {
    throw std::invalid_argument("group_logmeanexp_rows: rows not divisible by group");
  }
  const std::size_t n = av.rows() / group;
  Tensor out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double m = av[i * group];
    for (std::size_t k = 1; k < group; ++k) m = std::max(m, av[i * group + k]);
    double s = 0.0;
    for (std::size_t k = 0; k < group; ++k) s += std::exp(av[i * group + k] - m);
    out[i] = m + std::log(s / static_cast<double>(group));
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, group](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const std::size_t i = r / group;
      ga[r] += g[i] * std::exp(x[r] - y[i]) / static_cast<double>(group);
    }
  });
}

}  // namespace fdn::ad
