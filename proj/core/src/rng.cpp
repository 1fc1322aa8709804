#include "fdn/rng.hpp"

#include <boost/random/normal_distribution.hpp>

namespace fdn {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

Rng Rng::derive(std::string_view label) const {
  return Rng(mix64(seed_ ^ mix64(hash_label(label))));
}

// Ziggurat sampler; stateless, so no cached second draw.
using Normal = boost::random::normal_distribution<double>;

double Rng::normal() { return Normal()(engine_); }

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

bool Rng::bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

std::uint64_t Rng::next_u64() { return engine_(); }

std::size_t Rng::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

Tensor Rng::normal(std::size_t rows, std::size_t cols, double stddev) {
  Tensor t(rows, cols);
  Normal dist;
  for (double& v : t.storage()) v = stddev * dist(engine_);
  return t;
}

Tensor Rng::bernoulli_mask(std::size_t rows, std::size_t cols, double keep, double value) {
  Tensor t(rows, cols);
  const double scaled = keep * 4294967296.0;
  const std::uint64_t threshold =
      scaled >= 4294967296.0 ? 4294967296ULL : static_cast<std::uint64_t>(scaled);
  auto& d = t.storage();
  for (std::size_t i = 0; i < d.size(); i += 2) {
    const std::uint64_t u = engine_();
    d[i] = (u & 0xffffffffULL) < threshold ? value : 0.0;
    if (i + 1 < d.size()) d[i + 1] = (u >> 32) < threshold ? value : 0.0;
  }
  return t;
}

}  // namespace fdn
