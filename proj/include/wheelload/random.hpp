#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "wheelload/autodiff.hpp"

namespace wheelload {

/// Seeded generator with a serializable state. Every stochastic step in the
/// pipeline owns one of these; nothing reads global randomness.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }

  ad::Array normal_array(const ad::Shape& shape, double sd = 1.0);

  std::mt19937_64& engine() { return engine_; }

  /// Engine plus cached distribution state, as text.
  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const { return state() == other.state(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_;
};

/// Derives an independent stream seed from a base seed and a label.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace wheelload
