#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "winnorm/error.hpp"
#include "winnorm/normalization.hpp"

namespace winnorm {
namespace {

using testing::naive_channel_stats;
using testing::naive_region_stats;
using testing::random_tensor;

Tensor4<double> plane_1234() { return Tensor4<double>(Dims{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}); }

TEST(Stats, BnConstantInputAndOracle) {
  Tape<double> tape;
  auto s = bn_stats(tape.constant(Tensor4<double>(Dims{3, 2, 4, 4}, 3.0)));
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(s.mean.value()[c], 3.0);
    EXPECT_EQ(s.var.value()[c], 0.0);
  }
  const auto f = random_tensor(Dims{4, 3, 5, 5}, 1);
  const auto got = bn_stats(tape.constant(f));
  const auto want = naive_channel_stats(f);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(got.mean.value()[c], want.mean[c], 1e-10);
    EXPECT_NEAR(got.var.value()[c], want.var[c], 1e-10);
  }
}

TEST(Stats, BnRunningUpdate) {
  StatsC s;
  s.running_mean = {1.0, 2.0};
  s.running_var = {1.0, 1.0};
  const std::vector<double> m{3.0, 4.0}, v{0.5, 2.0};
  bn_update_running(s, m, v, 0.0);
  EXPECT_EQ(s.running_mean, m);
  EXPECT_EQ(s.running_var, v);
  bn_update_running(s, std::vector<double>{5.0, 6.0}, std::vector<double>{1.5, 0.0}, 0.9);
  EXPECT_DOUBLE_EQ(s.running_mean[0], 0.9 * 3.0 + 0.1 * 5.0);
  EXPECT_DOUBLE_EQ(s.running_var[1], 0.9 * 2.0);
}

TEST(Stats, InstanceHandValuesSymmetryAndOracle) {
  Tape<double> tape;
  auto s = in_stats(tape.constant(plane_1234()));
  EXPECT_DOUBLE_EQ(s.mean.value()[0], 2.5);
  EXPECT_DOUBLE_EQ(s.var.value()[0], 1.25);

  auto twin = random_tensor(Dims{2, 1, 3, 3}, 2);
  for (std::size_t i = 0; i < 9; ++i) twin.at(1, 0, i / 3, i % 3) = twin.at(0, 0, i / 3, i % 3);
  auto ts = in_stats(tape.constant(twin));
  EXPECT_EQ(ts.mean.value()[0], ts.mean.value()[1]);
  EXPECT_EQ(ts.var.value()[0], ts.var.value()[1]);

  const auto f = random_tensor(Dims{2, 3, 8, 8}, 3);
  const auto got = in_stats(tape.constant(f));
  const auto want = naive_region_stats(f, [](auto, auto) { return true; });
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(got.mean.value()[i], want.mean[i], 1e-10);
    EXPECT_NEAR(got.var.value()[i], want.var[i], 1e-10);
  }
}

TEST(Stats, WindowHandValuesAndFullPlaneIdentity) {
  Tape<double> tape;
  const WindowSpec right_column{1, 0, 2, 2};
  auto s = win_stats(tape.constant(plane_1234()), right_column);
  EXPECT_DOUBLE_EQ(s.mean.value()[0], 3.0);
  EXPECT_DOUBLE_EQ(s.var.value()[0], 1.0);

  const auto f = random_tensor(Dims{2, 3, 8, 8}, 4);
  auto fv = tape.constant(f);
  const auto full = win_stats(fv, RegionMask::full({8, 8}));
  const auto in = in_stats(fv);
  EXPECT_EQ(full.mean.value(), in.mean.value());
  EXPECT_EQ(full.var.value(), in.var.value());
  EXPECT_THROW(win_stats(fv, RegionMask({8, 8}, false)), DegenerateInputError);
}

TEST(Stats, BlockRegionsMatchOracleAndPooledVarianceIdentity) {
  const auto part = partition_blocks({32, 32}, {8, 8}, {8, 8});
  Rng rng(5);
  Tape<double> tape;
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_tensor(Dims{2, 3, 8, 8}, 100 + trial);
    const auto region = region_for_strategy(Strategy::block, rng, {8, 8}, 0.5, &part);
    const auto got = win_stats(tape.constant(f), region);
    const auto want = naive_region_stats(f, [&](auto h, auto w) { return region.at(h, w); });
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_NEAR(got.mean.value()[i], want.mean[i], 1e-10);
      EXPECT_NEAR(got.var.value()[i], want.var[i], 1e-10);
      // var = E[x^2] - E[x]^2 over the union of blocks.
      double s2 = 0.0;
      const std::size_t n = i / 3, c = i % 3;
      for (std::size_t h = 0; h < 8; ++h)
        for (std::size_t w = 0; w < 8; ++w)
          if (region.at(h, w)) s2 += f.at(n, c, h, w) * f.at(n, c, h, w);
      const double ex2 = s2 / static_cast<double>(region.count());
      EXPECT_NEAR(got.var.value()[i], ex2 - want.mean[i] * want.mean[i], 1e-12);
    }
  }
}

TEST(Stats, PooledMeanBoundForAcceptedWindows) {
  Rng rng(6);
  Tape<double> tape;
  for (int trial = 0; trial < 200; ++trial) {
    const auto f = random_tensor(Dims{1, 2, 16, 16}, 200 + trial, -2, 3);
    const WindowSpec w = sample_window(rng, {16, 16}, 0.7);
    auto fv = tape.constant(f);
    const auto local = win_stats(fv, w);
    const auto global = in_stats(fv);
    for (std::size_t c = 0; c < 2; ++c) {
      double dev = 0.0;
      for (double x : f.plane(0, c)) dev = std::max(dev, std::abs(x - global.mean.value()[c]));
      EXPECT_LE(std::abs(local.mean.value()[c] - global.mean.value()[c]), (1.0 / 0.7 - 1.0) * dev + 1e-12);
    }
  }
}

TEST(Stats, SpeckleLimitsAndSpread) {
  Tape<double> tape;
  const auto f = random_tensor(Dims{100, 100, 2, 2}, 7);
  auto fv = tape.constant(f);
  const auto in = in_stats(fv);
  Rng tiny(1);
  const auto near = speckle_stats(fv, tiny, 1e-12);
  for (std::size_t i = 0; i < in.mean.value().size(); ++i) {
    EXPECT_NEAR(near.mean.value()[i], in.mean.value()[i], 1e-10);
    EXPECT_NEAR(near.var.value()[i], in.var.value()[i], 1e-10);
  }
  Rng rng(2);
  const auto s = speckle_stats(fv, rng, 0.2);
  double sum = 0.0, sq = 0.0;
  const std::size_t n = in.mean.value().size();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_GE(s.var.value()[i], 0.0);
    const double eta = s.mean.value()[i] / in.mean.value()[i] - 1.0;
    sum += eta;
    sq += eta * eta;
  }
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 0.2, 0.2 * 0.05);
  Rng r3(3);
  EXPECT_THROW(speckle_stats(fv, r3, 0.0), ConfigError);
}

TEST(Mix, EndpointsHandValueAndConvexity) {
  Tape<double> tape;
  const auto f = random_tensor(Dims{3, 4, 8, 8}, 8);
  auto fv = tape.constant(f);
  const auto local = win_stats(fv, WindowSpec{1, 2, 7, 8});
  const auto global = in_stats(fv);
  const auto zero = mix_stats(local, global, Tensor4<double>::matrix(3, 4, 0.0), StatSubset::both);
  EXPECT_EQ(zero.mean.value(), global.mean.value());
  EXPECT_EQ(zero.var.value(), global.var.value());
  const auto one = mix_stats(local, global, Tensor4<double>::matrix(3, 4, 1.0), StatSubset::both);
  EXPECT_EQ(one.mean.value(), local.mean.value());
  EXPECT_EQ(one.var.value(), local.var.value());

  StatsNC<double> a{tape.constant(Tensor4<double>::matrix(1, 1, 3.0)), tape.constant(Tensor4<double>::matrix(1, 1, 1.0))};
  StatsNC<double> b{tape.constant(Tensor4<double>::matrix(1, 1, 2.5)), tape.constant(Tensor4<double>::matrix(1, 1, 2.0))};
  EXPECT_DOUBLE_EQ(mix_stats(a, b, Tensor4<double>::matrix(1, 1, 0.5), StatSubset::both).mean.value()[0], 2.75);
  const auto mo = mix_stats(a, b, Tensor4<double>::matrix(1, 1, 0.5), StatSubset::mean_only);
  EXPECT_EQ(mo.var.value()[0], 2.0);
  const auto vo = mix_stats(a, b, Tensor4<double>::matrix(1, 1, 0.5), StatSubset::var_only);
  EXPECT_EQ(vo.mean.value()[0], 2.5);
  EXPECT_DOUBLE_EQ(vo.var.value()[0], 1.5);

  Rng rng(9);
  Tensor4<double> lam = Tensor4<double>::matrix(3, 4);
  for (std::size_t i = 0; i < lam.size(); ++i) lam[i] = rng.uniform();
  const auto mixed = mix_stats(local, global, lam, StatSubset::both);
  for (std::size_t i = 0; i < lam.size(); ++i) {
    const double lo = std::min(local.var.value()[i], global.var.value()[i]);
    const double hi = std::max(local.var.value()[i], global.var.value()[i]);
    EXPECT_GE(mixed.var.value()[i], lo - 1e-15);
    EXPECT_LE(mixed.var.value()[i], hi + 1e-15);
  }
  lam[0] = 1.5;
  EXPECT_THROW(mix_stats(local, global, lam, StatSubset::both), ConfigError);
}

TEST(Standardize, HandValuesIdentityAffineAndInverse) {
  Tape<double> tape;
  auto f = tape.constant(Tensor4<double>(Dims{1, 1, 1, 2}, std::vector<double>{1, 3}));
  StatsNC<double> s{tape.constant(Tensor4<double>::matrix(1, 1, 2.0)), tape.constant(Tensor4<double>::matrix(1, 1, 1.0))};
  const auto out = standardize_affine(f, s, 1e-300).value();
  EXPECT_DOUBLE_EQ(out[0], -1.0);
  EXPECT_DOUBLE_EQ(out[1], 1.0);

  const auto x = random_tensor(Dims{2, 3, 6, 6}, 10, -3, 5);
  auto xv = tape.constant(x);
  const auto st = in_stats(xv);
  auto gamma = tape.constant(Tensor4<double>(Dims{1, 3, 1, 1}, 1.0));
  auto beta = tape.constant(Tensor4<double>(Dims{1, 3, 1, 1}, 0.0));
  const auto plain = standardize_affine(xv, st, 1e-5).value();
  EXPECT_EQ(standardize_affine(xv, st, 1e-5, &gamma, &beta).value(), plain);

  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t j = n * 3 + c;
      double m = 0.0, v = 0.0;
      for (double y : plain.plane(n, c)) m += y;
      m /= 36.0;
      for (double y : plain.plane(n, c)) v += (y - m) * (y - m);
      v /= 36.0;
      EXPECT_LE(std::abs(m), 1e-5);
      EXPECT_GE(v, 1.0 - 1e-3);
      EXPECT_LE(v, 1.0);
      // Undo the standardization.
      const double mu = st.mean.value()[j], sd = std::sqrt(st.var.value()[j] + 1e-5);
      for (std::size_t p = 0; p < 36; ++p) {
        const double back = plain.plane(n, c)[p] * sd + mu;
        EXPECT_LE(std::abs(back - x.plane(n, c)[p]), 1e-5 * std::abs(x.plane(n, c)[p]) + 1e-12);
      }
    }
  }
}

NormConfig win_config(double tau = 0.7, bool mixing = true) {
  NormConfig c;
  c.kind = NormKind::win;
  c.tau = tau;
  c.mixing = mixing;
  return c;
}

TEST(Layer, WinEvalEqualsInBitForBit) {
  NormConfig in_cfg;
  in_cfg.kind = NormKind::in;
  NormLayer<double> win(0, 3, win_config()), in(0, 3, in_cfg);
  const auto x = random_tensor(Dims{4, 3, 8, 8}, 11);
  Tape<double> tape;
  auto xv = tape.constant(x);
  const ForwardContext ctx{5, 7, nullptr};
  EXPECT_EQ(win.forward(xv, Mode::eval, ctx).value(), in.forward(xv, Mode::eval, ctx).value());
  EXPECT_EQ(win.forward(xv, Mode::eval, ctx).value(), in.forward(xv, Mode::train, ctx).value());
}

TEST(Layer, WinTrainWithTauOneAndNoMixingEqualsIn) {
  NormConfig in_cfg;
  in_cfg.kind = NormKind::in;
  NormLayer<double> win(2, 3, win_config(1.0, false)), in(2, 3, in_cfg);
  const auto x = random_tensor(Dims{2, 3, 16, 16}, 12);
  Tape<double> tape;
  auto xv = tape.constant(x);
  EXPECT_EQ(win.forward(xv, Mode::train, {1, 0, nullptr}).value(), in.forward(xv, Mode::train, {1, 0, nullptr}).value());
}

TEST(Layer, WinTrainDrawsDependOnlyOnSeedLayerAndStep) {
  NormLayer<double> a(1, 3, win_config(0.5)), b(1, 3, win_config(0.5)), other_layer(2, 3, win_config(0.5));
  const auto x = random_tensor(Dims{2, 3, 16, 16}, 13);
  Tape<double> tape;
  auto xv = tape.constant(x);
  const auto ya = a.forward(xv, Mode::train, {9, 4, nullptr}).value();
  EXPECT_EQ(ya, b.forward(xv, Mode::train, {9, 4, nullptr}).value());
  EXPECT_EQ(a.last_region(), b.last_region());
  EXPECT_EQ(a.last_lambda(), b.last_lambda());
  EXPECT_NE(ya, b.forward(xv, Mode::train, {9, 5, nullptr}).value());
  other_layer.forward(xv, Mode::train, {9, 4, nullptr});
  EXPECT_NE(a.last_lambda(), other_layer.last_lambda());
}

TEST(Layer, CachedReplayEqualsOnlineDraw) {
  NormLayer<double> online(3, 2, win_config(0.5)), offline(3, 2, win_config(0.5));
  EpochSchedule sched;
  sched.first_step = 10;
  sched.steps = 4;
  sched.layers = {{3, {16, 16}, std::nullopt}};
  const auto cache = WindowCache::build(21, sched, 0.5, Strategy::window);
  const auto x = random_tensor(Dims{2, 2, 16, 16}, 14);
  Tape<double> tape;
  auto xv = tape.constant(x);
  for (std::uint64_t step = 10; step < 14; ++step) {
    EXPECT_EQ(online.forward(xv, Mode::train, {21, step, nullptr}).value(),
              offline.forward(xv, Mode::train, {21, step, &cache}).value());
  }
}

TEST(Layer, BnEvalUsesRunningStatsIndependentOfBatch) {
  NormConfig cfg;
  cfg.kind = NormKind::bn;
  NormLayer<double> bn(0, 2, cfg);
  Tape<double> tape;
  bn.forward(tape.constant(random_tensor(Dims{8, 2, 4, 4}, 15)), Mode::train, {});
  const auto x = random_tensor(Dims{4, 2, 4, 4}, 16);
  const auto full = bn.forward(tape.constant(x), Mode::eval, {}).value();
  for (std::size_t n = 0; n < 4; ++n) {
    Tensor4<double> one(Dims{1, 2, 4, 4});
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t p = 0; p < 16; ++p) one.plane(0, c)[p] = x.plane(n, c)[p];
    const auto y = bn.forward(tape.constant(one), Mode::eval, {}).value();
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t p = 0; p < 16; ++p) EXPECT_EQ(y.plane(0, c)[p], full.plane(n, c)[p]);
  }
}

TEST(Layer, InAndWinArePermutationEquivariant) {
  for (NormKind kind : {NormKind::in, NormKind::win}) {
    NormConfig cfg = win_config(0.5);
    cfg.kind = kind;
    NormLayer<double> layer(0, 2, cfg);
    const auto x = random_tensor(Dims{3, 2, 8, 8}, 17);
    Tensor4<double> rev(x.dims());
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t p = 0; p < 64; ++p) rev.plane(2 - n, c)[p] = x.plane(n, c)[p];
    Tape<double> tape;
    // Mixing weights are drawn per row, so the train path is only checked with mixing off.
    const Mode mode = kind == NormKind::win ? Mode::eval : Mode::train;
    const auto y = layer.forward(tape.constant(x), mode, {1, 0, nullptr}).value();
    const auto yr = layer.forward(tape.constant(rev), mode, {1, 0, nullptr}).value();
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t p = 0; p < 64; ++p) EXPECT_EQ(yr.plane(2 - n, c)[p], y.plane(n, c)[p]);
  }
}

TEST(Layer, AffineDefaultsPerKind) {
  NormConfig bn, in, win = win_config();
  bn.kind = NormKind::bn;
  in.kind = NormKind::in;
  EXPECT_EQ(NormLayer<float>(0, 4, bn).parameters().size(), 2u);
  EXPECT_TRUE(NormLayer<float>(0, 4, in).parameters().empty());
  EXPECT_TRUE(NormLayer<float>(0, 4, win).parameters().empty());
  win.affine = true;
  EXPECT_EQ(NormLayer<float>(0, 4, win).parameters().size(), 2u);
}

TEST(Layer, ConfigValidation) {
  NormConfig c;
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NormConfig{};
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = NormConfig{};
  c.eps = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_norm_kind("GN"), ConfigError);
}

TEST(Layer, WinGradientMatchesFiniteDifferences) {
  for (Strategy strategy : {Strategy::window, Strategy::block, Strategy::pixel, Strategy::mask}) {
    NormConfig cfg = win_config(0.5);
    cfg.strategy = strategy;
    cfg.block_input = {16, 16};
    cfg.block_patch = {4, 4};
    cfg.affine = true;
    NormLayer<double> layer(1, 2, cfg);
    auto x = make_node(random_tensor(Dims{2, 2, 8, 8}, 18), true);
    layer.gamma()->value = random_tensor(Dims{1, 2, 1, 1}, 19, 0.5, 1.5);
    const auto weights = random_tensor(Dims{2, 2, 8, 8}, 20);
    std::vector<NodePtr<double>> probe{x, layer.gamma(), layer.beta()};
    // Same (seed, step) on every call freezes the region and the mixing weights.
    auto loss = [&](bool backward) {
      Tape<double> tape;
      auto y = layer.forward(tape.watch(x), Mode::train, {3, 1, nullptr});
      auto l = ops::sum_all(ops::mul(y, tape.constant(weights)));
      if (backward) {
        for (auto& p : probe) p->zero_grad();
        tape.backward(l);
      }
      return l.value()[0];
    };
    loss(true);
    EXPECT_LT(testing::max_fd_relative_error(probe, [&] { return loss(false); }), 1e-4) << to_string(strategy);
  }
}

}  // namespace
}  // namespace winnorm
