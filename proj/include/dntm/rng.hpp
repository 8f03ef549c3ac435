#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dntm {

// Explicitly seeded generator. Draws are derived from raw 64-bit outputs so
// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = engine_();
    while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Draw from the categorical distribution with the given (normalized)
  // probabilities. Falls back to the last positive entry on round-off.
  template <typename Real>
  std::size_t categorical(std::span<const Real> probs) {
    const double u = uniform();
    double acc = 0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0) continue;
      acc += static_cast<double>(probs[i]);
      last = i;
      if (u < acc) return i;
    }
    return last;
  }

  // Derived generator for an independent stream, e.g. validation data.
  Rng split(std::uint64_t salt) {
    return Rng(next_u64() ^ (salt * 0x9E3779B97F4A7C15ULL));
  }

  std::string state() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }

  void set_state(const std::string& text) {
    std::istringstream iss(text);
    iss >> engine_;
    if (!iss) throw std::invalid_argument("Rng: malformed state string");
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dntm
