#include "winnorm/rng.hpp"

#include <cmath>
#include <numbers>

namespace winnorm {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) noexcept : key_(splitmix64(seed + kGolden)) {}

Rng::Rng(std::uint64_t seed, Stream stream) noexcept
    : key_(splitmix64(splitmix64(seed + kGolden) ^ (static_cast<std::uint64_t>(stream) * 0xD1B54A32D192ED03ULL))) {}

Rng Rng::fork(std::uint64_t a, std::uint64_t b) const noexcept {
  Rng child(0);
  child.key_ = splitmix64(splitmix64(key_ ^ splitmix64(a + 0x632BE59BD9B4E019ULL)) + b * kGolden);
  return child;
}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return splitmix64(key_ + counter_ * kGolden);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_int(std::uint64_t n) noexcept {
  // Rejection on the top of the range keeps the draw exactly uniform.
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() noexcept {
  // Box-Muller, cosine branch only; no cached second value keeps forks stateless.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::log_gamma_variate(double shape) noexcept {
  if (shape < 1.0) {
    // G(a) = G(a + 1) * U^(1/a)
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return log_gamma_variate(shape + 1.0) + std::log(u) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

double Rng::gamma(double shape) noexcept { return std::exp(log_gamma_variate(shape)); }

double Rng::beta(double a, double b) noexcept {
  const double lx = log_gamma_variate(a);
  const double ly = log_gamma_variate(b);
  // x / (x + y) = 1 / (1 + exp(ly - lx))
  return 1.0 / (1.0 + std::exp(ly - lx));
}

}  // namespace winnorm
