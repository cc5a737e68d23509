#include "winnorm/normalization.hpp"

#include <cmath>

#include "winnorm/error.hpp"

namespace winnorm {

NormKind parse_norm_kind(std::string_view name) {
  if (name == "BN" || name == "bn") return NormKind::bn;
  if (name == "IN" || name == "in") return NormKind::in;
  if (name == "WIN" || name == "win") return NormKind::win;
  throw ConfigError("unknown normalization kind '" + std::string(name) + "'");
}

std::string_view to_string(NormKind k) {
  switch (k) {
    case NormKind::bn: return "BN";
    case NormKind::in: return "IN";
    case NormKind::win: return "WIN";
  }
  return "?";
}

StatSubset parse_stat_subset(std::string_view name) {
  if (name == "both") return StatSubset::both;
  if (name == "mean_only") return StatSubset::mean_only;
  if (name == "var_only") return StatSubset::var_only;
  throw ConfigError("unknown stat_subset '" + std::string(name) + "'");
}

std::string_view to_string(StatSubset s) {
  switch (s) {
    case StatSubset::both: return "both";
    case StatSubset::mean_only: return "mean_only";
    case StatSubset::var_only: return "var_only";
  }
  return "?";
}

void NormConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("norm.tau must lie in (0, 1]");
  if (!(alpha > 0.0)) throw ConfigError("norm.alpha must be positive");
  if (!(eps > 0.0)) throw ConfigError("norm.eps must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("norm.momentum must lie in [0, 1]");
  if (strategy == Strategy::speckle && !(speckle_magnitude > 0.0)) {
    throw ConfigError("norm.speckle_magnitude must be positive");
  }
  if (block_patch.h == 0 || block_patch.w == 0 || block_input.h % block_patch.h != 0 ||
      block_input.w % block_patch.w != 0) {
    throw ConfigError("norm.block_input must be divisible by norm.block_patch");
  }
}

template <typename T>
StatsNC<T> bn_stats(const Var<T>& f) {
  return ops::channel_mean_var(f);
}

void bn_update_running(StatsC& stats, std::span<const double> batch_mean, std::span<const double> batch_var,
                       double momentum) {
  if (batch_mean.size() != batch_var.size()) throw ShapeError("batch mean/var lengths differ");
  if (stats.running_mean.empty()) {
    stats.running_mean.assign(batch_mean.size(), 0.0);
    stats.running_var.assign(batch_var.size(), 1.0);
  }
  if (stats.running_mean.size() != batch_mean.size()) throw ShapeError("running buffers do not match batch statistics");
  stats.mean.assign(batch_mean.begin(), batch_mean.end());
  stats.var.assign(batch_var.begin(), batch_var.end());
  stats.momentum = momentum;
  for (std::size_t c = 0; c < batch_mean.size(); ++c) {
    stats.running_mean[c] = momentum * stats.running_mean[c] + (1.0 - momentum) * batch_mean[c];
    stats.running_var[c] = momentum * stats.running_var[c] + (1.0 - momentum) * batch_var[c];
  }
}

template <typename T>
StatsNC<T> in_stats(const Var<T>& f) {
  return ops::reduce_mean_var(f);
}

template <typename T>
StatsNC<T> win_stats(const Var<T>& f, std::span<const std::uint32_t> pixels) {
  return ops::reduce_mean_var(f, pixels);
}

template <typename T>
StatsNC<T> win_stats(const Var<T>& f, const WindowSpec& window) {
  const PlaneDims dims{f.dims().h, f.dims().w};
  if (window.x1 > dims.w || window.y1 > dims.h) throw ShapeError("window exceeds the feature plane");
  const auto pixels = RegionMask::from_window(dims, window).pixels();
  return win_stats(f, std::span<const std::uint32_t>(pixels));
}

template <typename T>
StatsNC<T> win_stats(const Var<T>& f, const RegionMask& region) {
  if (region.dims() != PlaneDims{f.dims().h, f.dims().w}) throw ShapeError("region does not match the feature plane");
  const auto pixels = region.pixels();
  return win_stats(f, std::span<const std::uint32_t>(pixels));
}

template <typename T>
StatsNC<T> speckle_stats(const Var<T>& f, Rng& rng, double magnitude) {
  if (!(magnitude > 0.0)) throw ConfigError("speckle magnitude must be positive");
  auto global = in_stats(f);
  const Dims d = global.mean.dims();
  Tensor4<T> mean_scale(d);
  Tensor4<T> var_scale(d);
  for (std::size_t i = 0; i < mean_scale.size(); ++i) {
    mean_scale[i] = static_cast<T>(1.0 + rng.normal(0.0, magnitude));
    var_scale[i] = static_cast<T>(std::abs(1.0 + rng.normal(0.0, magnitude)));
  }
  auto& tape = f.tape();
  return {ops::mul(global.mean, tape.constant(std::move(mean_scale))),
          ops::mul(global.var, tape.constant(std::move(var_scale)))};
}

template <typename T>
StatsNC<T> mix_stats(const StatsNC<T>& local, const StatsNC<T>& global, const Tensor4<T>& lambda, StatSubset subset) {
  if (local.mean.dims() != global.mean.dims() || local.var.dims() != global.var.dims() ||
      lambda.dims() != local.mean.dims()) {
    throw ShapeError("mix_stats: local " + local.mean.dims().str() + ", global " + global.mean.dims().str() +
                     ", lambda " + lambda.dims().str());
  }
  for (T l : lambda.data()) {
    if (!(l >= T{0} && l <= T{1})) throw ConfigError("mixing weight outside [0, 1]");
  }
  auto& tape = local.mean.tape();
  Tensor4<T> complement(lambda.dims());
  for (std::size_t i = 0; i < lambda.size(); ++i) complement[i] = T{1} - lambda[i];
  const Var<T> lam = tape.constant(lambda);
  const Var<T> one_minus = tape.constant(std::move(complement));
  auto blend = [&](const Var<T>& a, const Var<T>& b) { return ops::add(ops::mul(lam, a), ops::mul(one_minus, b)); };
  StatsNC<T> out;
  out.mean = subset == StatSubset::var_only ? global.mean : blend(local.mean, global.mean);
  out.var = subset == StatSubset::mean_only ? global.var : blend(local.var, global.var);
  return out;
}

template <typename T>
Var<T> standardize_affine(const Var<T>& f, const StatsNC<T>& stats, double eps, const Var<T>* gamma,
                          const Var<T>* beta) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  Var<T> out = ops::standardize(f, stats.mean, stats.var, static_cast<T>(eps));
  if (gamma != nullptr && beta != nullptr) out = ops::add(ops::mul(out, *gamma), *beta);
  return out;
}

template <typename T>
NormLayer<T>::NormLayer(std::uint32_t layer_id, std::size_t channels, NormConfig config)
    : layer_id_(layer_id), channels_(channels), config_(std::move(config)) {
  config_.validate();
  if (config_.affine_enabled()) {
    gamma_ = make_node(Tensor4<T>(Dims{1, channels, 1, 1}, T{1}), true);
    beta_ = make_node(Tensor4<T>(Dims{1, channels, 1, 1}, T{0}), true);
  }
  if (config_.kind == NormKind::bn) {
    running_.running_mean.assign(channels, 0.0);
    running_.running_var.assign(channels, 1.0);
    running_.momentum = config_.momentum;
  }
}

template <typename T>
std::vector<NodePtr<T>> NormLayer<T>::parameters() const {
  if (!gamma_) return {};
  return {gamma_, beta_};
}

template <typename T>
void NormLayer<T>::remember(const StatsNC<T>& s) {
  double m = 0.0, v = 0.0;
  for (T x : s.mean.value().data()) m += std::abs(static_cast<double>(x));
  for (T x : s.var.value().data()) v += static_cast<double>(x);
  const auto n = static_cast<double>(s.mean.value().size());
  last_summary_ = {m / n, v / n};
}

template <typename T>
StatsNC<T> NormLayer<T>::window_statistics(const Var<T>& f, const ForwardContext& ctx) {
  const PlaneDims dims{f.dims().h, f.dims().w};
  switch (config_.strategy) {
    case Strategy::global:
      last_region_ = SampledRegion{Strategy::global, dims, WindowSpec::full(dims), {}, std::nullopt};
      return in_stats(f);
    case Strategy::speckle: {
      last_region_ = SampledRegion{Strategy::speckle, dims, WindowSpec::full(dims), {}, std::nullopt};
      Rng rng = Rng(ctx.seed, Stream::noise).fork(layer_id_, ctx.step);
      return speckle_stats(f, rng, config_.speckle_magnitude);
    }
    default: break;
  }
  if (ctx.cache != nullptr && ctx.cache->covers(layer_id_, ctx.step)) {
    const auto& entry = ctx.cache->replay(layer_id_, ctx.step);
    if (entry.region.dims != dims) throw ShapeError("cached region does not match the feature plane");
    last_region_ = entry.region;
    return win_stats(f, std::span<const std::uint32_t>(entry.pixels));
  }
  LayerSchedule layer{layer_id_, dims, std::nullopt};
  if (config_.strategy == Strategy::block) layer.partition = BlockPartition(config_.block_input, config_.block_patch, dims);
  last_region_ = sample_region_online(ctx.seed, layer, ctx.step, config_.tau, config_.strategy,
                                      config_.share_window_across_layers);
  const auto pixels = last_region_.mask().pixels();
  return win_stats(f, std::span<const std::uint32_t>(pixels));
}

template <typename T>
Var<T> NormLayer<T>::forward(const Var<T>& f, Mode mode, const ForwardContext& ctx) {
  if (f.dims().c != channels_) {
    throw ShapeError("norm layer " + std::to_string(layer_id_) + " expects " + std::to_string(channels_) +
                     " channels, got " + f.dims().str());
  }
  auto& tape = f.tape();
  StatsNC<T> stats;
  switch (config_.kind) {
    case NormKind::bn: {
      if (mode == Mode::train) {
        stats = bn_stats(f);
        const auto& mv = stats.mean.value();
        const auto& vv = stats.var.value();
        std::vector<double> bm(mv.data().begin(), mv.data().end());
        std::vector<double> bv(vv.data().begin(), vv.data().end());
        bn_update_running(running_, bm, bv, config_.momentum);
      } else {
        Tensor4<T> m = Tensor4<T>::matrix(1, channels_);
        Tensor4<T> v = Tensor4<T>::matrix(1, channels_);
        for (std::size_t c = 0; c < channels_; ++c) {
          m[c] = static_cast<T>(running_.running_mean[c]);
          v[c] = static_cast<T>(running_.running_var[c]);
        }
        stats = {tape.constant(std::move(m)), tape.constant(std::move(v))};
      }
      break;
    }
    case NormKind::in: stats = in_stats(f); break;
    case NormKind::win: {
      if (mode == Mode::eval) {
        stats = in_stats(f);
        break;
      }
      StatsNC<T> local = window_statistics(f, ctx);
      if (!config_.mixing && config_.stat_subset == StatSubset::both) {
        stats = local;
        break;
      }
      StatsNC<T> global = in_stats(f);
      Tensor4<T> lambda = Tensor4<T>::matrix(f.dims().n, channels_, T{1});
      if (config_.mixing) {
        Rng rng = Rng(ctx.seed, Stream::lambda).fork(layer_id_, ctx.step);
        for (std::size_t i = 0; i < lambda.size(); ++i) lambda[i] = static_cast<T>(rng.beta(config_.alpha, config_.alpha));
      }
      last_lambda_ = lambda;
      stats = mix_stats(local, global, lambda, config_.stat_subset);
      break;
    }
  }
  remember(stats);
  if (gamma_) {
    const Var<T> g = tape.watch(gamma_);
    const Var<T> b = tape.watch(beta_);
    return standardize_affine(f, stats, config_.eps, &g, &b);
  }
  return standardize_affine(f, stats, config_.eps);
}

#define WINNORM_INSTANTIATE_NORM(T)                                                                                 \
  template StatsNC<T> bn_stats<T>(const Var<T>&);                                                                   \
  template StatsNC<T> in_stats<T>(const Var<T>&);                                                                   \
  template StatsNC<T> win_stats<T>(const Var<T>&, std::span<const std::uint32_t>);                                  \
  template StatsNC<T> win_stats<T>(const Var<T>&, const WindowSpec&);                                               \
  template StatsNC<T> win_stats<T>(const Var<T>&, const RegionMask&);                                               \
  template StatsNC<T> speckle_stats<T>(const Var<T>&, Rng&, double);                                                \
  template StatsNC<T> mix_stats<T>(const StatsNC<T>&, const StatsNC<T>&, const Tensor4<T>&, StatSubset);           \
  template Var<T> standardize_affine<T>(const Var<T>&, const StatsNC<T>&, double, const Var<T>*, const Var<T>*); \
  template class NormLayer<T>;

WINNORM_INSTANTIATE_NORM(float)
WINNORM_INSTANTIATE_NORM(double)

}  // namespace winnorm
