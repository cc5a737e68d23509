#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "winnorm/rng.hpp"

namespace winnorm {

enum class CorruptionKind { gaussian_noise, box_blur, contrast, brightness, pixelate };
inline constexpr std::array<CorruptionKind, 5> kCorruptionKinds{CorruptionKind::gaussian_noise, CorruptionKind::box_blur,
                                                                CorruptionKind::contrast, CorruptionKind::brightness,
                                                                CorruptionKind::pixelate};
inline constexpr int kSeverities = 5;

CorruptionKind parse_corruption_kind(std::string_view name);
std::string_view to_string(CorruptionKind k);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;  // 1..5
};

/// Severity -> parameter for each kind:
///   gaussian_noise: sigma; box_blur and pixelate: kernel / block side in pixels;
///   contrast: gain about the image mean; brightness: additive offset.
struct CorruptionTable {
  std::map<CorruptionKind, std::array<double, kSeverities>> parameters;

  static CorruptionTable defaults();
  double parameter(const CorruptionSpec& spec) const;
  std::string to_json() const;
  static CorruptionTable from_json(std::string_view text);
  bool operator==(const CorruptionTable&) const = default;
};

/// Applies one corruption with an explicit parameter to a C x side x side image.
std::vector<float> apply_corruption(std::span<const float> image, std::size_t channels, std::size_t side,
                                    CorruptionKind kind, double parameter, Rng& rng);

/// Looks the parameter up in `table`; output is clamped to [0, 1].
std::vector<float> corrupt(std::span<const float> image, std::size_t channels, std::size_t side,
                           const CorruptionSpec& spec, Rng& rng,
                           const CorruptionTable& table = CorruptionTable::defaults());

}  // namespace winnorm
