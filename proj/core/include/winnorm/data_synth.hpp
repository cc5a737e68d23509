#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "winnorm/rng.hpp"
#include "winnorm/trainer.hpp"

namespace winnorm {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageSize = kImageChannels * kImageSide * kImageSide;

enum class ShapeClass { disk = 0, square = 1, triangle = 2, cross = 3 };
inline constexpr std::size_t kShapeClasses = 4;
std::string_view to_string(ShapeClass s);

/// Acquisition style of one site. Pixels are clamped to [0, 1] after every stage.
struct SiteStyle {
  std::string name;
  double background = 0.3;
  double texture_amplitude = 0.05;
  double texture_frequency = 2.0;  // sinusoid cycles across the image
  double foreground_lo = 0.75;
  double foreground_hi = 0.9;
  double contrast = 1.0;  // gain about mid-grey
  double noise_sigma = 0.02;
  std::array<double, 9> channel_mix{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, out = M * in

  bool operator==(const SiteStyle&) const = default;
};

/// Sites A to E: reference, dark, bright and flat, high-contrast warm, textured and noisy cool.
std::vector<SiteStyle> default_sites();
const SiteStyle& site_style(std::string_view name);

struct Geometry {
  double cx = 16.0;
  double cy = 16.0;
  double scale = 8.0;
  double rotation = 0.0;
  bool operator==(const Geometry&) const = default;
};

struct ShapeSample {
  std::vector<float> image;  // 3 x 32 x 32, row-major per channel
  int label = 0;
  std::string site;
  Geometry geometry;
};

/// Anti-aliased coverage in [0, 1] of a shape on the 32 x 32 grid (4 x 4 supersampling).
std::vector<double> rasterize(ShapeClass shape, const Geometry& g);

/// n_per_class * num_classes samples; sample i has label i % num_classes. Geometry comes
/// from rng.fork(i) alone, so two sites sharing `rng` share labels and geometry exactly.
std::vector<ShapeSample> gen_site_dataset(const Rng& rng, const SiteStyle& style, std::size_t n_per_class,
                                          std::size_t num_classes = kShapeClasses);

/// Stacks samples into an N x 3 x 32 x 32 tensor with labels.
LabeledImages pack(const std::vector<ShapeSample>& samples);

}  // namespace winnorm
