#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "winnorm/rng.hpp"

namespace winnorm {

struct PlaneDims {
  std::size_t h = 0;
  std::size_t w = 0;
  constexpr std::size_t area() const noexcept { return h * w; }
  constexpr bool operator==(const PlaneDims&) const = default;
};

/// Half-open rectangle in feature coordinates: pixel (h, w) is inside iff
/// x0 <= w < x1 and y0 <= h < y1.
struct WindowSpec {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t x1 = 0;
  std::size_t y1 = 0;

  constexpr std::size_t width() const noexcept { return x1 - x0; }
  constexpr std::size_t height() const noexcept { return y1 - y0; }
  constexpr std::size_t area() const noexcept { return width() * height(); }
  constexpr bool contains(std::size_t h, std::size_t w) const noexcept { return w >= x0 && w < x1 && h >= y0 && h < y1; }
  constexpr bool operator==(const WindowSpec&) const = default;

  static constexpr WindowSpec full(PlaneDims d) noexcept { return {0, 0, d.w, d.h}; }
};

/// Maximum rejection rounds before sample_window falls back to the full plane.
inline constexpr int kMaxWindowAttempts = 1000;

/// Rejection sampler for a random window of area >= tau * H * W. Each round draws a
/// ratio r ~ U(0,1), a square-ish extent (W sqrt(r), H sqrt(r)) and an integer center,
/// then clamps the corners into the plane.
WindowSpec sample_window(Rng& rng, PlaneDims dims, double tau);

/// Fixed non-overlapping grid of patches on the network input, mapped to one feature scale.
class BlockPartition {
 public:
  BlockPartition() = default;
  BlockPartition(PlaneDims input, PlaneDims patch, PlaneDims feature);

  std::size_t block_count() const noexcept { return rows_ * cols_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  PlaneDims input() const noexcept { return input_; }
  PlaneDims patch() const noexcept { return patch_; }
  PlaneDims feature() const noexcept { return feature_; }
  /// Feature-pixel extent of one block.
  PlaneDims block_dims() const noexcept { return block_; }
  /// Rectangle of block i (row-major over the grid) in feature coordinates.
  WindowSpec block(std::size_t i) const;

 private:
  PlaneDims input_{}, patch_{}, feature_{}, block_{};
  std::size_t rows_ = 0, cols_ = 0;
};

BlockPartition partition_blocks(PlaneDims input, PlaneDims patch, PlaneDims feature);

/// Number of blocks drawn for ratio tau: max(1, floor(tau * B)).
std::size_t blocks_to_draw(std::size_t block_count, double tau);

/// Distinct block indices drawn uniformly without replacement, sorted ascending.
std::vector<std::uint32_t> sample_blocks(Rng& rng, const BlockPartition& partition, double tau);

enum class Strategy { global, window, block, pixel, mask, speckle };

Strategy parse_strategy(std::string_view name);
std::string_view to_string(Strategy s);

/// Boolean keep-mask over an H x W plane.
class RegionMask {
 public:
  RegionMask() = default;
  explicit RegionMask(PlaneDims dims, bool value = false) : dims_(dims), keep_(dims.area(), value ? 1 : 0) {}

  static RegionMask full(PlaneDims dims) { return RegionMask(dims, true); }
  static RegionMask from_window(PlaneDims dims, const WindowSpec& w);

  PlaneDims dims() const noexcept { return dims_; }
  bool at(std::size_t h, std::size_t w) const { return keep_[h * dims_.w + w] != 0; }
  void set(std::size_t h, std::size_t w, bool v) { keep_[h * dims_.w + w] = v ? 1 : 0; }
  std::size_t count() const;
  /// Row-major offsets (h * W + w) of kept pixels, ascending.
  std::vector<std::uint32_t> pixels() const;
  RegionMask inverted() const;

  bool operator==(const RegionMask&) const = default;

 private:
  PlaneDims dims_{};
  std::vector<std::uint8_t> keep_;
};

/// Parameters of one drawn region; enough to rebuild the mask exactly.
struct SampledRegion {
  Strategy strategy = Strategy::global;
  PlaneDims dims{};
  WindowSpec window{};                  // window: kept rectangle; mask: erased rectangle
  std::vector<std::uint32_t> indices;   // block: block ids; pixel: kept plane offsets
  std::optional<BlockPartition> partition;

  RegionMask mask() const;
  bool operator==(const SampledRegion& o) const {
    return strategy == o.strategy && dims == o.dims && window == o.window && indices == o.indices;
  }
};

/// Draws one region. Pixel keeps each pixel with probability tau; Mask erases a window
/// drawn with threshold 1 - tau. Both redraw when nothing is kept.
SampledRegion draw_region(Strategy strategy, Rng& rng, PlaneDims dims, double tau,
                          const BlockPartition* partition = nullptr);

RegionMask region_for_strategy(Strategy strategy, Rng& rng, PlaneDims dims, double tau,
                               const BlockPartition* partition = nullptr);

/// Generator for the (layer, step) draw. With share_across_layers every layer of a
/// step receives the same stream, so windows land at the same relative place.
Rng region_stream(std::uint64_t seed, std::uint32_t layer, std::uint64_t step, bool share_across_layers);

struct LayerSchedule {
  std::uint32_t layer_id = 0;
  PlaneDims dims{};
  std::optional<BlockPartition> partition;
};

struct EpochSchedule {
  std::uint64_t first_step = 0;
  std::uint64_t steps = 0;
  std::vector<LayerSchedule> layers;
};

/// Online draw for (layer, step); bit-identical to what a cache built with the same seed replays.
SampledRegion sample_region_online(std::uint64_t seed, const LayerSchedule& layer, std::uint64_t step, double tau,
                                   Strategy strategy, bool share_across_layers);

/// Pre-drawn regions for one epoch, keyed by (layer id, step). Entries keep their
/// materialized pixel lists so replay costs a lookup.
class WindowCache {
 public:
  struct Entry {
    std::uint32_t layer_id = 0;
    std::uint64_t step = 0;
    SampledRegion region;
    std::vector<std::uint32_t> pixels;
  };

  static WindowCache build(std::uint64_t seed, const EpochSchedule& schedule, double tau, Strategy strategy,
                           bool share_across_layers = false);

  const Entry& replay(std::uint32_t layer_id, std::uint64_t step) const;
  bool covers(std::uint32_t layer_id, std::uint64_t step) const;
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  /// One JSON object per line: layer, step, strategy, h, w and either "window" corners
  /// [x0, y0, x1, y1] or an "indices" array.
  void write_jsonl(std::ostream& os) const;
  static WindowCache read_jsonl(std::istream& is);

 private:
  std::uint64_t first_step_ = 0;
  std::uint64_t steps_ = 0;
  std::vector<std::uint32_t> layer_ids_;
  std::vector<Entry> entries_;  // step-major, then layer order
};

}  // namespace winnorm
