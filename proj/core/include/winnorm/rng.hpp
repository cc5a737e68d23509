#pragma once

#include <cstdint>

namespace winnorm {

/// Independent randomness sources. Changing one (e.g. the window stream) leaves every
/// other stream's draws untouched.
enum class Stream : std::uint64_t {
  window = 1,
  lambda = 2,
  data = 3,
  init = 4,
  augment = 5,
  noise = 6,
  shuffle = 7,
  corruption = 8,
};

/// Counter-based generator: output i is SplitMix64's finalizer applied to key + i * golden.
/// Every distribution is implemented here (not via <random>) so streams are bit-identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;
  Rng(std::uint64_t seed, Stream stream) noexcept;

  /// Child generator keyed on (this key, a, b); does not advance this generator.
  Rng fork(std::uint64_t a, std::uint64_t b = 0) const noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape) noexcept;
  /// Beta(a, b), computed in log space so tiny shapes (a = 0.1) never produce 0/0.
  double beta(double a, double b) noexcept;

 private:
  double log_gamma_variate(double shape) noexcept;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace winnorm
