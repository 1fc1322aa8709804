#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "fdn/tensor.hpp"

namespace fdn {

// Seeded random stream. Streams for distinct purposes are derived by hashing
// labels into the seed, so (model, task, seed, purpose) tuples never share
// draws. Two Rng built from the same seed produce identical sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  // Independent child stream keyed by a label.
  Rng derive(std::string_view label) const;

  double normal();
  double uniform(double lo, double hi);
  bool bernoulli(double p);
  std::uint64_t next_u64();
  std::size_t index(std::size_t n);

  Tensor normal(std::size_t rows, std::size_t cols, double stddev = 1.0);
  // Entries equal `value` with probability `keep`, else 0. Two draws per
  // engine call at 32-bit resolution.
  Tensor bernoulli_mask(std::size_t rows, std::size_t cols, double keep, double value);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used for seed derivation.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_label(std::string_view label);

}  // namespace fdn
