// Micro-benchmarks for the hot paths of a training step: region sampling, region
// statistics, convolution and one normalization layer round trip.

#include <benchmark/benchmark.h>

#include "winnorm/autodiff.hpp"
#include "winnorm/losses.hpp"
#include "winnorm/model.hpp"
#include "winnorm/normalization.hpp"
#include "winnorm/ops.hpp"
#include "winnorm/window_sampling.hpp"

namespace winnorm {
namespace {

Tensor4<float> noise(Dims d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor4<float> t(d);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

void BM_SampleWindow(benchmark::State& state) {
  const PlaneDims plane{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(0))};
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(sample_window(rng, plane, 0.7));
}
BENCHMARK(BM_SampleWindow)->Arg(8)->Arg(32);

void BM_SampleRegion(benchmark::State& state) {
  const auto strategy = static_cast<Strategy>(state.range(0));
  const PlaneDims plane{32, 32};
  const BlockPartition partition = partition_blocks({32, 32}, {8, 8}, plane);
  Rng rng(2);
  for (auto _ : state) {
    const SampledRegion r = draw_region(strategy, rng, plane, 0.7, &partition);
    benchmark::DoNotOptimize(r.mask().pixels());
  }
  state.SetLabel(std::string(to_string(strategy)));
}
BENCHMARK(BM_SampleRegion)
    ->Arg(static_cast<int>(Strategy::window))
    ->Arg(static_cast<int>(Strategy::block))
    ->Arg(static_cast<int>(Strategy::pixel))
    ->Arg(static_cast<int>(Strategy::mask));

void BM_InStats(benchmark::State& state) {
  const auto x = noise(Dims{64, 32, 32, 32}, 3);
  for (auto _ : state) {
    Tape<float> tape;
    NoGradGuard<float> guard(tape);
    benchmark::DoNotOptimize(in_stats(tape.constant(x)).mean.value()[0]);
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * x.size() * sizeof(float)));
}
BENCHMARK(BM_InStats)->Unit(benchmark::kMillisecond);

void BM_WinStatsWindow(benchmark::State& state) {
  const auto x = noise(Dims{64, 32, 32, 32}, 4);
  Rng rng(5);
  const auto pixels = RegionMask::from_window({32, 32}, sample_window(rng, {32, 32}, 0.7)).pixels();
  for (auto _ : state) {
    Tape<float> tape;
    NoGradGuard<float> guard(tape);
    benchmark::DoNotOptimize(win_stats(tape.constant(x), std::span<const std::uint32_t>(pixels)).mean.value()[0]);
  }
}
BENCHMARK(BM_WinStatsWindow)->Unit(benchmark::kMillisecond);

void BM_Conv3x3Forward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = noise(Dims{16, c, 32, 32}, 6);
  const auto k = noise(Dims{c, c, 3, 3}, 7);
  for (auto _ : state) {
    Tape<float> tape;
    NoGradGuard<float> guard(tape);
    benchmark::DoNotOptimize(ops::conv2d(tape.constant(x), tape.constant(k), 1, 1).value()[0]);
  }
}
BENCHMARK(BM_Conv3x3Forward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = noise(Dims{16, c, 32, 32}, 8);
  auto k = make_node(noise(Dims{c, c, 3, 3}, 9), true);
  for (auto _ : state) {
    Tape<float> tape;
    const auto y = ops::conv2d(tape.leaf(x), tape.watch(k), 1, 1);
    tape.backward(ops::sum_all(y));
    k->zero_grad();
  }
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_WinLayerTrainStep(benchmark::State& state) {
  const auto x = noise(Dims{64, 32, 32, 32}, 10);
  NormConfig cfg;
  cfg.strategy = static_cast<Strategy>(state.range(0));
  NormLayer<float> layer(0, 32, cfg);
  std::uint64_t step = 0;
  for (auto _ : state) {
    Tape<float> tape;
    const auto f = tape.leaf(x);
    tape.backward(ops::mean_all(layer.forward(f, Mode::train, {1, step++, nullptr})));
  }
  state.SetLabel(std::string(to_string(cfg.strategy)));
}
BENCHMARK(BM_WinLayerTrainStep)
    ->Arg(static_cast<int>(Strategy::window))
    ->Arg(static_cast<int>(Strategy::block))
    ->Unit(benchmark::kMillisecond);

void BM_DeskModelTrainStep(benchmark::State& state) {
  CnnSpec spec;
  spec.stages = {{16, false, std::nullopt}, {32, true, std::nullopt}, {64, true, std::nullopt}};
  spec.norm.kind = state.range(0) == 0 ? NormKind::bn : NormKind::win;
  Model<float> model(spec);
  const auto x = noise(Dims{64, 3, 32, 32}, 11);
  std::vector<int> labels(64);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  std::uint64_t step = 0;
  for (auto _ : state) {
    Tape<float> tape;
    const auto logits = model.forward(tape, x, Mode::train, {0, step++, nullptr});
    model.zero_grad();
    tape.backward(cross_entropy(logits, labels));
  }
  state.SetLabel(state.range(0) == 0 ? "BN" : "WIN");
}
BENCHMARK(BM_DeskModelTrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace winnorm

BENCHMARK_MAIN();
