#include "winnorm/corruption.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "winnorm/error.hpp"

namespace winnorm {

CorruptionKind parse_corruption_kind(std::string_view name) {
  for (auto k : kCorruptionKinds) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown corruption kind '" + std::string(name) + "'");
}

std::string_view to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::box_blur: return "box_blur";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::pixelate: return "pixelate";
  }
  return "?";
}

CorruptionTable CorruptionTable::defaults() {
  CorruptionTable t;
  t.parameters[CorruptionKind::gaussian_noise] = {0.04, 0.08, 0.12, 0.16, 0.20};
  t.parameters[CorruptionKind::box_blur] = {3, 5, 7, 9, 11};  // odd sides stay centred
  t.parameters[CorruptionKind::contrast] = {0.7, 0.55, 0.4, 0.3, 0.2};
  t.parameters[CorruptionKind::brightness] = {0.1, 0.2, 0.3, 0.4, 0.5};
  t.parameters[CorruptionKind::pixelate] = {2, 3, 4, 5, 6};
  return t;
}

double CorruptionTable::parameter(const CorruptionSpec& spec) const {
  if (spec.severity < 1 || spec.severity > kSeverities) {
    throw ConfigError("corruption severity must lie in 1..5, got " + std::to_string(spec.severity));
  }
  const auto it = parameters.find(spec.kind);
  if (it == parameters.end()) throw ConfigError("no severity table for " + std::string(to_string(spec.kind)));
  return it->second[static_cast<std::size_t>(spec.severity - 1)];
}

std::string CorruptionTable::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : parameters) j[std::string(to_string(k))] = v;
  return j.dump(2);
}

CorruptionTable CorruptionTable::from_json(std::string_view text) {
  CorruptionTable t;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [key, value] : j.items()) {
      const auto arr = value.get<std::vector<double>>();
      if (arr.size() != kSeverities) throw IntegrityError("corruption table '" + key + "' needs 5 severities");
      std::array<double, kSeverities> a{};
      std::copy(arr.begin(), arr.end(), a.begin());
      t.parameters[parse_corruption_kind(key)] = a;
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed corruption table: ") + e.what());
  }
  return t;
}

namespace {

std::vector<float> box_blur(std::span<const float> image, std::size_t channels, std::size_t side, std::size_t k) {
  std::vector<float> out(image.size());
  // Kernel of side k covers offsets [-(k-1)/2, k/2] with edge clamping.
  const auto lo = -static_cast<std::ptrdiff_t>((k - 1) / 2);
  const auto hi = static_cast<std::ptrdiff_t>(k / 2);
  const auto last = static_cast<std::ptrdiff_t>(side) - 1;
  for (std::size_t c = 0; c < channels; ++c) {
    const float* src = image.data() + c * side * side;
    for (std::size_t h = 0; h < side; ++h) {
      for (std::size_t w = 0; w < side; ++w) {
        double acc = 0.0;
        for (auto dy = lo; dy <= hi; ++dy) {
          const auto y = std::clamp(static_cast<std::ptrdiff_t>(h) + dy, std::ptrdiff_t{0}, last);
          for (auto dx = lo; dx <= hi; ++dx) {
            const auto x = std::clamp(static_cast<std::ptrdiff_t>(w) + dx, std::ptrdiff_t{0}, last);
            acc += src[static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x)];
          }
        }
        out[c * side * side + h * side + w] = static_cast<float>(acc / static_cast<double>(k * k));
      }
    }
  }
  return out;
}

std::vector<float> pixelate(std::span<const float> image, std::size_t channels, std::size_t side, std::size_t b) {
  std::vector<float> out(image.size());
  for (std::size_t c = 0; c < channels; ++c) {
    const float* src = image.data() + c * side * side;
    float* dst = out.data() + c * side * side;
    for (std::size_t by = 0; by < side; by += b) {
      for (std::size_t bx = 0; bx < side; bx += b) {
        const std::size_t ey = std::min(side, by + b), ex = std::min(side, bx + b);
        double acc = 0.0;
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) acc += src[y * side + x];
        }
        const auto mean = static_cast<float>(acc / static_cast<double>((ey - by) * (ex - bx)));
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) dst[y * side + x] = mean;
        }
      }
    }
  }
  return out;
}

std::size_t kernel_side(double parameter) {
  const double r = std::round(parameter);
  if (r < 1.0 || std::abs(r - parameter) > 1e-9) throw ConfigError("kernel side must be a positive integer");
  return static_cast<std::size_t>(r);
}

}  // namespace

std::vector<float> apply_corruption(std::span<const float> image, std::size_t channels, std::size_t side,
                                    CorruptionKind kind, double parameter, Rng& rng) {
  if (image.size() != channels * side * side) throw ShapeError("corruption input does not match its dims");
  std::vector<float> out;
  switch (kind) {
    case CorruptionKind::gaussian_noise:
      out.assign(image.begin(), image.end());
      for (auto& v : out) v = static_cast<float>(v + parameter * rng.normal());
      break;
    case CorruptionKind::box_blur:
      out = box_blur(image, channels, side, kernel_side(parameter));
      break;
    case CorruptionKind::contrast: {
      double mean = 0.0;
      for (float v : image) mean += v;
      mean /= static_cast<double>(image.size());
      out.assign(image.begin(), image.end());
      if (parameter != 1.0) {
        for (auto& v : out) v = static_cast<float>((v - mean) * parameter + mean);
      }
      break;
    }
    case CorruptionKind::brightness:
      out.assign(image.begin(), image.end());
      for (auto& v : out) v = static_cast<float>(v + parameter);
      break;
    case CorruptionKind::pixelate:
      out = pixelate(image, channels, side, kernel_side(parameter));
      break;
  }
  for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

std::vector<float> corrupt(std::span<const float> image, std::size_t channels, std::size_t side,
                           const CorruptionSpec& spec, Rng& rng, const CorruptionTable& table) {
  return apply_corruption(image, channels, side, spec.kind, table.parameter(spec), rng);
}

}  // namespace winnorm
