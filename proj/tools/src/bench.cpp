#include <algorithm>
#include <chrono>

#include "winnorm/error.hpp"
#include "winnorm_cli/app.hpp"

namespace winnorm::cli {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Features, schedule and cache for one benchmark configuration. `step` obtains the region
// for one (layer, step) pair in the requested mode and computes its window statistics.
class WindowBench {
 public:
  explicit WindowBench(const BenchOptions& options) : options_(options), model_(options.model) {
    if (options.steps == 0) throw ConfigError("--steps 0 would produce an empty report");
    if (options.repeats == 0 || options.batch == 0) throw ConfigError("--repeats and --batch must be positive");
    schedule_ = model_.window_schedule(0, options.steps);
    if (schedule_.layers.empty()) throw ConfigError("the benchmark model has no window-sampling WIN layers");
    cfg_ = model_.norm_layers()[schedule_.layers.front().layer_id].config();
    Rng noise(options.seed, Stream::noise);
    for (const auto& layer : schedule_.layers) {
      const std::size_t channels = model_.norm_layers()[layer.layer_id].channels();
      Tensor4<float> f(Dims{options.batch, channels, layer.dims.h, layer.dims.w});
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(noise.normal());
      features_.push_back(std::move(f));
    }
  }

  // The cache is built before any timing starts, as an offline run would do before its epoch.
  void prepare_offline() {
    cache_ = WindowCache::build(options_.seed, schedule_, cfg_.tau, cfg_.strategy, cfg_.share_window_across_layers);
  }

  std::size_t layers() const { return schedule_.layers.size(); }

  void step(BenchMode mode, std::size_t l, std::uint64_t step) {
    const auto& layer = schedule_.layers[l];
    Tape<float> tape;
    NoGradGuard<float> guard(tape);
    const Var<float> f = tape.constant(features_[l]);
    StatsNC<float> stats;
    if (mode == BenchMode::offline) {
      stats = win_stats(f, std::span<const std::uint32_t>(cache_->replay(layer.layer_id, step).pixels));
    } else {
      const SampledRegion region = sample_region_online(options_.seed, layer, step, cfg_.tau, cfg_.strategy,
                                                        cfg_.share_window_across_layers);
      const auto pixels = region.mask().pixels();
      stats = win_stats(f, std::span<const std::uint32_t>(pixels));
    }
    sink_ += static_cast<double>(stats.mean.value()[0]);
  }

  // Keeps the statistics observable so the loops cannot be optimized away.
  bool sink_is_sentinel() const { return sink_ == 1e300; }

 private:
  BenchOptions options_;
  Model<float> model_;
  EpochSchedule schedule_;
  NormConfig cfg_;
  std::vector<Tensor4<float>> features_;
  std::optional<WindowCache> cache_;
  double sink_ = 0.0;
};

}  // namespace

BenchResult bench_windows(BenchMode mode, const BenchOptions& options) {
  WindowBench bench(options);
  if (mode == BenchMode::offline) bench.prepare_offline();
  BenchResult result{mode, {}, 0.0};
  for (std::size_t r = 0; r < options.repeats; ++r) {
    const auto t0 = Clock::now();
    for (std::uint64_t step = 0; step < options.steps; ++step) {
      for (std::size_t l = 0; l < bench.layers(); ++l) bench.step(mode, l, step);
    }
    result.epoch_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  if (bench.sink_is_sentinel()) result.epoch_ms.push_back(0.0);
  result.median_ms = median(result.epoch_ms);
  return result;
}

std::pair<BenchResult, BenchResult> bench_windows_paired(const BenchOptions& options) {
  WindowBench bench(options);
  bench.prepare_offline();
  BenchResult online{BenchMode::online, {}, 0.0}, offline{BenchMode::offline, {}, 0.0};
  // Repeat 0 warms both paths and is not recorded.
  for (std::size_t r = 0; r <= options.repeats; ++r) {
    double online_ms = 0.0, offline_ms = 0.0;
    for (std::uint64_t step = 0; step < options.steps; ++step) {
      for (std::size_t l = 0; l < bench.layers(); ++l) {
        // Whichever mode runs second finds the features warm in cache, so the order alternates.
        const bool online_first = (step + l) % 2 == 0;
        for (int k = 0; k < 2; ++k) {
          const BenchMode mode = (k == 0) == online_first ? BenchMode::online : BenchMode::offline;
          const auto t0 = Clock::now();
          bench.step(mode, l, step);
          const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
          (mode == BenchMode::online ? online_ms : offline_ms) += ms;
        }
      }
    }
    if (r == 0) continue;
    online.epoch_ms.push_back(online_ms);
    offline.epoch_ms.push_back(offline_ms);
  }
  if (bench.sink_is_sentinel()) online.epoch_ms.push_back(0.0);
  online.median_ms = median(online.epoch_ms);
  offline.median_ms = median(offline.epoch_ms);
  return {online, offline};
}

}  // namespace winnorm::cli
