#include "winnorm/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "winnorm/error.hpp"

namespace winnorm {

namespace {

constexpr std::uint64_t kGeometryKey = 0x67656f6d;  // "geom"

std::uint64_t name_key(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
  return h;
}

bool inside(ShapeClass shape, double u, double v, double r) {
  switch (shape) {
    case ShapeClass::disk:
      return u * u + v * v <= 0.81 * r * r;
    case ShapeClass::square:
      return std::abs(u) <= 0.8 * r && std::abs(v) <= 0.8 * r;
    case ShapeClass::triangle: {
      // Equilateral, circumradius r, one vertex on +v; each edge sits at distance r / 2.
      constexpr double s = 0.86602540378443865;
      return -v <= 0.5 * r && (s * u + 0.5 * v) <= 0.5 * r && (-s * u + 0.5 * v) <= 0.5 * r;
    }
    case ShapeClass::cross:
      return (std::abs(u) <= r && std::abs(v) <= 0.3 * r) || (std::abs(v) <= r && std::abs(u) <= 0.3 * r);
  }
  return false;
}

}  // namespace

std::string_view to_string(ShapeClass s) {
  switch (s) {
    case ShapeClass::disk: return "disk";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
    case ShapeClass::cross: return "cross";
  }
  return "?";
}

std::vector<SiteStyle> default_sites() {
  std::vector<SiteStyle> s(5);
  s[0] = {"A", 0.30, 0.05, 2.0, 0.75, 0.90, 1.0, 0.02, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
  s[1] = {"B", 0.10, 0.03, 3.0, 0.35, 0.50, 1.0, 0.03, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
  s[2] = {"C", 0.55, 0.08, 1.5, 0.85, 1.00, 0.7, 0.04, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
  s[3] = {"D", 0.30, 0.05, 2.0, 0.75, 0.90, 1.4, 0.03, {0.9, 0.3, 0.1, 0.1, 0.7, 0.1, 0.0, 0.1, 0.5}};
  s[4] = {"E", 0.25, 0.15, 5.0, 0.60, 0.80, 1.0, 0.08, {0.4, 0.1, 0.0, 0.1, 0.7, 0.2, 0.1, 0.3, 0.9}};
  return s;
}

const SiteStyle& site_style(std::string_view name) {
  static const std::vector<SiteStyle> sites = default_sites();
  for (const auto& s : sites) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown site '" + std::string(name) + "' (expected one of A, B, C, D, E)");
}

std::vector<double> rasterize(ShapeClass shape, const Geometry& g) {
  constexpr int kSuper = 4;
  std::vector<double> cov(kImageSide * kImageSide, 0.0);
  const double cr = std::cos(g.rotation), sr = std::sin(g.rotation);
  for (std::size_t h = 0; h < kImageSide; ++h) {
    for (std::size_t w = 0; w < kImageSide; ++w) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double x = static_cast<double>(w) + (sx + 0.5) / kSuper - g.cx;
          const double y = static_cast<double>(h) + (sy + 0.5) / kSuper - g.cy;
          const double u = cr * x + sr * y;
          const double v = -sr * x + cr * y;
          hits += inside(shape, u, v, g.scale) ? 1 : 0;
        }
      }
      cov[h * kImageSide + w] = static_cast<double>(hits) / (kSuper * kSuper);
    }
  }
  return cov;
}

std::vector<ShapeSample> gen_site_dataset(const Rng& rng, const SiteStyle& style, std::size_t n_per_class,
                                          std::size_t num_classes) {
  if (n_per_class == 0) throw ConfigError("n_per_class must be at least 1");
  if (num_classes < 2 || num_classes > kShapeClasses) throw ConfigError("num_classes must lie in [2, 4]");
  const std::size_t total = n_per_class * num_classes;
  std::vector<ShapeSample> out(total);
  const std::uint64_t style_key = name_key(style.name);
  constexpr std::size_t P = kImageSide * kImageSide;
  for (std::size_t i = 0; i < total; ++i) {
    Rng geo = rng.fork(kGeometryKey, i);
    ShapeSample& s = out[i];
    s.label = static_cast<int>(i % num_classes);
    s.site = style.name;
    s.geometry.cx = geo.uniform(11.0, 21.0);
    s.geometry.cy = geo.uniform(11.0, 21.0);
    s.geometry.scale = geo.uniform(6.0, 10.0);
    s.geometry.rotation = geo.uniform(0.0, 2.0 * std::numbers::pi);
    const std::vector<double> cov = rasterize(static_cast<ShapeClass>(s.label), s.geometry);

    Rng look = rng.fork(style_key, i);
    const double phase = look.uniform(0.0, 2.0 * std::numbers::pi);
    const double theta = look.uniform(0.0, std::numbers::pi);
    const double fg = look.uniform(style.foreground_lo, style.foreground_hi);
    const double kx = 2.0 * std::numbers::pi * style.texture_frequency * std::cos(theta) / kImageSide;
    const double ky = 2.0 * std::numbers::pi * style.texture_frequency * std::sin(theta) / kImageSide;
    std::vector<double> grey(P);
    for (std::size_t h = 0; h < kImageSide; ++h) {
      for (std::size_t w = 0; w < kImageSide; ++w) {
        const double bg = style.background + style.texture_amplitude * std::sin(kx * w + ky * h + phase);
        const double c = cov[h * kImageSide + w];
        grey[h * kImageSide + w] = std::clamp(c * fg + (1.0 - c) * bg, 0.0, 1.0);
      }
    }
    s.image.resize(kImageSize);
    for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
      const double gain = style.channel_mix[ch * 3] + style.channel_mix[ch * 3 + 1] + style.channel_mix[ch * 3 + 2];
      for (std::size_t p = 0; p < P; ++p) {
        double v = std::clamp(gain * grey[p], 0.0, 1.0);
        v = std::clamp((v - 0.5) * style.contrast + 0.5, 0.0, 1.0);
        v = std::clamp(v + style.noise_sigma * look.normal(), 0.0, 1.0);
        s.image[ch * P + p] = static_cast<float>(v);
      }
    }
  }
  return out;
}

LabeledImages pack(const std::vector<ShapeSample>& samples) {
  LabeledImages out{Tensor4<float>(Dims{samples.size(), kImageChannels, kImageSide, kImageSide}), {}};
  out.labels.reserve(samples.size());
  auto dst = out.images.data();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].image.size() != kImageSize) throw ShapeError("sample image must hold 3 x 32 x 32 values");
    std::copy(samples[i].image.begin(), samples[i].image.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * kImageSize));
    out.labels.push_back(samples[i].label);
  }
  return out;
}

}  // namespace winnorm
