#include "winnorm/window_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>

#include "winnorm/error.hpp"

namespace winnorm {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("window ratio tau must lie in (0, 1], got " + std::to_string(tau));
}

std::size_t clamp_coord(double v, std::size_t hi) {
  if (v <= 0.0) return 0;
  if (v >= static_cast<double>(hi)) return hi;
  return static_cast<std::size_t>(v);
}

}  // namespace

WindowSpec sample_window(Rng& rng, PlaneDims dims, double tau) {
  check_tau(tau);
  if (dims.area() == 0) throw ConfigError("cannot place a window on an empty plane");
  const WindowSpec full = WindowSpec::full(dims);
  // tau = 1 admits only the full plane.
  if (tau >= 1.0) return full;
  const double need = tau * static_cast<double>(dims.area());
  const double width = static_cast<double>(dims.w);
  const double height = static_cast<double>(dims.h);
  for (int attempt = 0; attempt < kMaxWindowAttempts; ++attempt) {
    const double ratio = rng.uniform();
    const double half_w = std::floor(width * std::sqrt(ratio) / 2.0);
    const double half_h = std::floor(height * std::sqrt(ratio) / 2.0);
    const double cx = static_cast<double>(rng.uniform_int(dims.w));
    const double cy = static_cast<double>(rng.uniform_int(dims.h));
    WindowSpec w{clamp_coord(cx - half_w, dims.w), clamp_coord(cy - half_h, dims.h), clamp_coord(cx + half_w, dims.w),
                 clamp_coord(cy + half_h, dims.h)};
    if (w.x1 > w.x0 && w.y1 > w.y0 && static_cast<double>(w.area()) >= need) return w;
  }
  return full;
}

BlockPartition::BlockPartition(PlaneDims input, PlaneDims patch, PlaneDims feature)
    : input_(input), patch_(patch), feature_(feature) {
  if (patch.h == 0 || patch.w == 0 || input.h == 0 || input.w == 0) throw ConfigError("block partition with empty dims");
  if (input.h % patch.h != 0 || input.w % patch.w != 0) {
    throw ConfigError("input " + std::to_string(input.h) + "x" + std::to_string(input.w) + " not divisible by patch " +
                      std::to_string(patch.h) + "x" + std::to_string(patch.w));
  }
  // Feature scale s = feature / input; a block spans s * patch feature pixels.
  if ((feature.h * patch.h) % input.h != 0 || (feature.w * patch.w) % input.w != 0) {
    throw ConfigError("block size is not integral at feature scale " + std::to_string(feature.h) + "x" +
                      std::to_string(feature.w));
  }
  block_ = {feature.h * patch.h / input.h, feature.w * patch.w / input.w};
  if (block_.h == 0 || block_.w == 0) throw ConfigError("block smaller than one feature pixel");
  rows_ = input.h / patch.h;
  cols_ = input.w / patch.w;
  if (rows_ * block_.h != feature.h || cols_ * block_.w != feature.w) throw ConfigError("blocks do not tile the feature plane");
}

WindowSpec BlockPartition::block(std::size_t i) const {
  if (i >= block_count()) throw ConfigError("block index " + std::to_string(i) + " out of range");
  const std::size_t r = i / cols_;
  const std::size_t c = i % cols_;
  return {c * block_.w, r * block_.h, (c + 1) * block_.w, (r + 1) * block_.h};
}

BlockPartition partition_blocks(PlaneDims input, PlaneDims patch, PlaneDims feature) {
  return BlockPartition(input, patch, feature);
}

std::size_t blocks_to_draw(std::size_t block_count, double tau) {
  // The epsilon keeps products such as 0.29 * 100 from rounding down a whole block.
  const auto k = static_cast<std::size_t>(std::floor(tau * static_cast<double>(block_count) + 1e-9));
  return std::clamp<std::size_t>(k, 1, block_count);
}

std::vector<std::uint32_t> sample_blocks(Rng& rng, const BlockPartition& partition, double tau) {
  check_tau(tau);
  const std::size_t b = partition.block_count();
  const std::size_t k = blocks_to_draw(b, tau);
  std::vector<std::uint32_t> ids(b);
  std::iota(ids.begin(), ids.end(), 0u);
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_int(b - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Strategy parse_strategy(std::string_view name) {
  if (name == "global" || name == "Global") return Strategy::global;
  if (name == "window" || name == "Window") return Strategy::window;
  if (name == "block" || name == "Block") return Strategy::block;
  if (name == "pixel" || name == "Pixel") return Strategy::pixel;
  if (name == "mask" || name == "Mask") return Strategy::mask;
  if (name == "speckle" || name == "Speckle") return Strategy::speckle;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::global: return "global";
    case Strategy::window: return "window";
    case Strategy::block: return "block";
    case Strategy::pixel: return "pixel";
    case Strategy::mask: return "mask";
    case Strategy::speckle: return "speckle";
  }
  return "?";
}

RegionMask RegionMask::from_window(PlaneDims dims, const WindowSpec& w) {
  RegionMask m(dims);
  for (std::size_t h = w.y0; h < w.y1; ++h) {
    for (std::size_t x = w.x0; x < w.x1; ++x) m.set(h, x, true);
  }
  return m;
}

std::size_t RegionMask::count() const {
  return static_cast<std::size_t>(std::count(keep_.begin(), keep_.end(), std::uint8_t{1}));
}

std::vector<std::uint32_t> RegionMask::pixels() const {
  std::vector<std::uint32_t> out;
  out.reserve(count());
  for (std::size_t i = 0; i < keep_.size(); ++i) {
    if (keep_[i]) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

RegionMask RegionMask::inverted() const {
  RegionMask m = *this;
  for (auto& k : m.keep_) k = k ? 0 : 1;
  return m;
}

RegionMask SampledRegion::mask() const {
  switch (strategy) {
    case Strategy::global:
    case Strategy::speckle: return RegionMask::full(dims);
    case Strategy::window: return RegionMask::from_window(dims, window);
    case Strategy::mask: return RegionMask::from_window(dims, window).inverted();
    case Strategy::block: {
      if (!partition) throw ConfigError("block region without a partition");
      RegionMask m(dims);
      for (std::uint32_t id : indices) {
        const WindowSpec b = partition->block(id);
        for (std::size_t h = b.y0; h < b.y1; ++h) {
          for (std::size_t x = b.x0; x < b.x1; ++x) m.set(h, x, true);
        }
      }
      return m;
    }
    case Strategy::pixel: {
      RegionMask m(dims);
      for (std::uint32_t p : indices) m.set(p / dims.w, p % dims.w, true);
      return m;
    }
  }
  return RegionMask::full(dims);
}

SampledRegion draw_region(Strategy strategy, Rng& rng, PlaneDims dims, double tau, const BlockPartition* partition) {
  check_tau(tau);
  if (dims.area() == 0) throw ConfigError("region on an empty plane");
  SampledRegion r;
  r.strategy = strategy;
  r.dims = dims;
  switch (strategy) {
    case Strategy::global:
      r.window = WindowSpec::full(dims);
      return r;
    case Strategy::window:
      r.window = sample_window(rng, dims, tau);
      return r;
    case Strategy::block:
      if (partition == nullptr) throw ConfigError("block strategy requires a partition");
      if (partition->feature() != dims) throw ConfigError("block partition does not match the feature plane");
      r.partition = *partition;
      r.indices = sample_blocks(rng, *partition, tau);
      return r;
    case Strategy::pixel:
      for (int attempt = 0; attempt < kMaxWindowAttempts; ++attempt) {
        r.indices.clear();
        for (std::uint32_t p = 0; p < dims.area(); ++p) {
          if (rng.bernoulli(tau)) r.indices.push_back(p);
        }
        if (!r.indices.empty()) return r;
      }
      r.indices.resize(dims.area());
      std::iota(r.indices.begin(), r.indices.end(), 0u);
      return r;
    case Strategy::mask: {
      // Nothing to erase at tau = 1; an empty erased window keeps the whole plane.
      if (tau >= 1.0) {
        r.window = WindowSpec{};
        return r;
      }
      for (int attempt = 0; attempt < kMaxWindowAttempts; ++attempt) {
        r.window = sample_window(rng, dims, 1.0 - tau);
        if (r.window.area() < dims.area()) return r;
      }
      r.window = WindowSpec{};
      return r;
    }
    case Strategy::speckle: throw ConfigError("speckle perturbs statistics and has no spatial region");
  }
  throw ConfigError("unknown strategy");
}

RegionMask region_for_strategy(Strategy strategy, Rng& rng, PlaneDims dims, double tau,
                               const BlockPartition* partition) {
  return draw_region(strategy, rng, dims, tau, partition).mask();
}

Rng region_stream(std::uint64_t seed, std::uint32_t layer, std::uint64_t step, bool share_across_layers) {
  constexpr std::uint64_t kSharedLayer = 0xFFFFFFFFull;
  return Rng(seed, Stream::window).fork(share_across_layers ? kSharedLayer : layer, step);
}

SampledRegion sample_region_online(std::uint64_t seed, const LayerSchedule& layer, std::uint64_t step, double tau,
                                   Strategy strategy, bool share_across_layers) {
  Rng rng = region_stream(seed, layer.layer_id, step, share_across_layers);
  return draw_region(strategy, rng, layer.dims, tau, layer.partition ? &*layer.partition : nullptr);
}

WindowCache WindowCache::build(std::uint64_t seed, const EpochSchedule& schedule, double tau, Strategy strategy,
                               bool share_across_layers) {
  WindowCache cache;
  cache.first_step_ = schedule.first_step;
  cache.steps_ = schedule.steps;
  for (const auto& l : schedule.layers) cache.layer_ids_.push_back(l.layer_id);
  cache.entries_.reserve(schedule.steps * schedule.layers.size());
  for (std::uint64_t s = 0; s < schedule.steps; ++s) {
    const std::uint64_t step = schedule.first_step + s;
    for (const auto& l : schedule.layers) {
      Entry e;
      e.layer_id = l.layer_id;
      e.step = step;
      e.region = sample_region_online(seed, l, step, tau, strategy, share_across_layers);
      e.pixels = e.region.mask().pixels();
      cache.entries_.push_back(std::move(e));
    }
  }
  return cache;
}

bool WindowCache::covers(std::uint32_t layer_id, std::uint64_t step) const {
  if (step < first_step_ || step >= first_step_ + steps_) return false;
  return std::find(layer_ids_.begin(), layer_ids_.end(), layer_id) != layer_ids_.end();
}

const WindowCache::Entry& WindowCache::replay(std::uint32_t layer_id, std::uint64_t step) const {
  if (step < first_step_ || step >= first_step_ + steps_) {
    throw ConfigError("window cache replay past its range: step " + std::to_string(step));
  }
  const auto it = std::find(layer_ids_.begin(), layer_ids_.end(), layer_id);
  if (it == layer_ids_.end()) throw ConfigError("window cache has no layer " + std::to_string(layer_id));
  const std::size_t li = static_cast<std::size_t>(it - layer_ids_.begin());
  return entries_[(step - first_step_) * layer_ids_.size() + li];
}

void WindowCache::write_jsonl(std::ostream& os) const {
  for (const auto& e : entries_) {
    nlohmann::json j;
    j["layer"] = e.layer_id;
    j["step"] = e.step;
    j["strategy"] = std::string(to_string(e.region.strategy));
    j["h"] = e.region.dims.h;
    j["w"] = e.region.dims.w;
    const auto s = e.region.strategy;
    if (s == Strategy::window || s == Strategy::mask || s == Strategy::global) {
      j["window"] = {e.region.window.x0, e.region.window.y0, e.region.window.x1, e.region.window.y1};
    } else {
      j["indices"] = e.region.indices;
    }
    if (e.region.partition) {
      j["input"] = {e.region.partition->input().h, e.region.partition->input().w};
      j["patch"] = {e.region.partition->patch().h, e.region.partition->patch().w};
    }
    os << j.dump() << '\n';
  }
}

WindowCache WindowCache::read_jsonl(std::istream& is) {
  WindowCache cache;
  std::string line;
  std::uint64_t min_step = ~std::uint64_t{0};
  std::uint64_t max_step = 0;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      Entry e;
      e.layer_id = j.at("layer").get<std::uint32_t>();
      e.step = j.at("step").get<std::uint64_t>();
      e.region.strategy = parse_strategy(j.at("strategy").get<std::string>());
      e.region.dims = {j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>()};
      if (j.contains("window")) {
        const auto& w = j.at("window");
        e.region.window = {w.at(0).get<std::size_t>(), w.at(1).get<std::size_t>(), w.at(2).get<std::size_t>(),
                           w.at(3).get<std::size_t>()};
      }
      if (j.contains("indices")) e.region.indices = j.at("indices").get<std::vector<std::uint32_t>>();
      if (j.contains("input")) {
        e.region.partition = BlockPartition({j["input"][0].get<std::size_t>(), j["input"][1].get<std::size_t>()},
                                            {j["patch"][0].get<std::size_t>(), j["patch"][1].get<std::size_t>()},
                                            e.region.dims);
      }
      e.pixels = e.region.mask().pixels();
      if (std::find(cache.layer_ids_.begin(), cache.layer_ids_.end(), e.layer_id) == cache.layer_ids_.end()) {
        cache.layer_ids_.push_back(e.layer_id);
      }
      min_step = std::min(min_step, e.step);
      max_step = std::max(max_step, e.step);
      cache.entries_.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IntegrityError(std::string("malformed window cache: ") + ex.what());
  }
  if (cache.entries_.empty()) return cache;
  cache.first_step_ = min_step;
  cache.steps_ = max_step - min_step + 1;
  if (cache.entries_.size() != cache.steps_ * cache.layer_ids_.size()) {
    throw IntegrityError("window cache does not cover a full (step, layer) grid");
  }
  std::vector<Entry> ordered(cache.entries_.size());
  for (auto& e : cache.entries_) {
    const auto li = static_cast<std::size_t>(std::find(cache.layer_ids_.begin(), cache.layer_ids_.end(), e.layer_id) -
                                             cache.layer_ids_.begin());
    ordered[(e.step - cache.first_step_) * cache.layer_ids_.size() + li] = std::move(e);
  }
  cache.entries_ = std::move(ordered);
  return cache;
}

}  // namespace winnorm
