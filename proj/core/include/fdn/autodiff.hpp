#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>

#include "fdn/tensor.hpp"

namespace fdn {
class ParamStore;
}

namespace fdn::ad {

using GradMap = std::map<std::string, Tensor>;

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records one forward computation for reverse-mode differentiation. Build a
// fresh tape per minibatch and drop it after backward(). With recording off
// the tape only holds values, which is what inference uses.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor value);
  // Named leaf. Leaves with requires_grad appear in the map from backward().
  Var leaf(std::string name, Tensor value, bool requires_grad = true);
  // Binds a parameter from the store as a trainable leaf. Binding the same
  // name twice returns the same Var.
  Var param(const ParamStore& store, const std::string& name);

  // Reverse sweep from a scalar output. Throws std::invalid_argument for a
  // non-scalar output and std::logic_error when no trainable leaf feeds it.
  GradMap backward(Var output);

  // Gradient accumulated for a node by the last backward(); zeros if unreached.
  Tensor grad_of(Var v) const;

  // Op plumbing.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Lazily zero-initialised gradient accumulator for a node.
  Tensor& grad(std::size_t id);
  const Tensor& output_grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    std::string name;
    bool requires_grad = false;
    bool leaf = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<std::string, std::size_t> bound_;
  bool recording_;
};

// ---- element-wise with rank-2 broadcasting (each dim equal or 1) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var matmul(Var a, Var b);

Var square(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);

// ---- reductions and reshaping ----
Var sum(Var a);
Var mean(Var a);
Var sum_cols(Var a);                                      // r x c -> r x 1
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var repeat_rows(Var a, std::size_t times);                // row i -> rows [i*t, i*t+t)
Var group_mean_rows(Var a, std::size_t group);            // mean of consecutive row groups
Var group_logmeanexp_rows(Var a, std::size_t group);      // max-shifted, column vector input

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }

// Numerically stable softplus on a raw double.
double softplus(double x);
double sigmoid(double x);

}  // namespace fdn::ad
