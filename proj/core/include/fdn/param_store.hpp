#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fdn/tensor.hpp"

namespace fdn {

// Named trainable parameters. Iteration order is lexicographic by name, which
// keeps checkpoints and optimizer updates deterministic.
class ParamStore {
 public:
  // Registers a new parameter; throws if the name is taken.
  Tensor& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  // Total scalar count over all registered parameters.
  std::size_t count() const;
  std::size_t size() const { return params_.size(); }
  std::vector<std::string> names() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace fdn
