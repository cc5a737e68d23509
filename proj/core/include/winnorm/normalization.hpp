#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "winnorm/autodiff.hpp"
#include "winnorm/ops.hpp"
#include "winnorm/rng.hpp"
#include "winnorm/window_sampling.hpp"

namespace winnorm {

enum class NormKind { bn, in, win };
enum class StatSubset { both, mean_only, var_only };
enum class Mode { train, eval };

NormKind parse_norm_kind(std::string_view name);
std::string_view to_string(NormKind k);
StatSubset parse_stat_subset(std::string_view name);
std::string_view to_string(StatSubset s);

struct NormConfig {
  NormKind kind = NormKind::win;
  Strategy strategy = Strategy::window;
  double tau = 0.7;
  double alpha = 0.1;  // Beta(alpha, alpha) concentration for the mixing weight
  double eps = 1e-5;
  StatSubset stat_subset = StatSubset::both;
  bool mixing = true;
  /// Unset means the per-kind default: on for BN, off for IN and WIN.
  std::optional<bool> affine;
  double speckle_magnitude = 0.2;
  double momentum = 0.9;  // BN running-average momentum p
  PlaneDims block_input{32, 32};
  PlaneDims block_patch{8, 8};
  bool share_window_across_layers = false;

  bool affine_enabled() const { return affine.value_or(kind == NormKind::bn); }
  /// Throws ConfigError on tau outside (0,1], alpha <= 0, eps <= 0 and similar.
  void validate() const;
};

/// Per-(instance, channel) statistics, each N x C x 1 x 1 (1 x C x 1 x 1 for BN).
template <typename T>
using StatsNC = ops::MeanVar<T>;

/// Per-channel batch statistics plus the running buffers used at evaluation.
struct StatsC {
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
};

/// BN statistics over (N, H, W) for each channel.
template <typename T>
StatsNC<T> bn_stats(const Var<T>& f);

/// running <- p * running + (1 - p) * batch, for mean and variance.
void bn_update_running(StatsC& stats, std::span<const double> batch_mean, std::span<const double> batch_var,
                       double momentum);

/// Instance statistics over the full spatial plane.
template <typename T>
StatsNC<T> in_stats(const Var<T>& f);

/// Statistics restricted to a region shared by every (n, c). For block regions the
/// normalizer is the pooled pixel count of the selected blocks.
template <typename T>
StatsNC<T> win_stats(const Var<T>& f, std::span<const std::uint32_t> pixels);
template <typename T>
StatsNC<T> win_stats(const Var<T>& f, const WindowSpec& window);
template <typename T>
StatsNC<T> win_stats(const Var<T>& f, const RegionMask& region);

/// Instance statistics scaled by (1 + eta1) for the mean and |1 + eta2| for the
/// variance, eta ~ Normal(0, magnitude^2) drawn per (n, c).
template <typename T>
StatsNC<T> speckle_stats(const Var<T>& f, Rng& rng, double magnitude);

/// mean = lambda * local + (1 - lambda) * global, same for variance; the subset switch
/// keeps the other statistic global. lambda is N x C with entries in [0, 1].
template <typename T>
StatsNC<T> mix_stats(const StatsNC<T>& local, const StatsNC<T>& global, const Tensor4<T>& lambda, StatSubset subset);

/// (f - mean) / sqrt(var + eps), then gamma * . + beta when both are given.
template <typename T>
Var<T> standardize_affine(const Var<T>& f, const StatsNC<T>& stats, double eps, const Var<T>* gamma = nullptr,
                          const Var<T>* beta = nullptr);

/// Per-invocation randomness keys. Draws for a (layer, step) pair depend only on
/// (seed, layer, step), so repeating a forward with the same context repeats its windows and lambdas.
struct ForwardContext {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  const WindowCache* cache = nullptr;
};

template <typename T>
class NormLayer {
 public:
  NormLayer(std::uint32_t layer_id, std::size_t channels, NormConfig config);

  /// Train: BN batch stats (+ running update), IN stats, or WIN region/mixed stats.
  /// Eval: BN running stats; IN and WIN both use instance statistics.
  Var<T> forward(const Var<T>& f, Mode mode, const ForwardContext& ctx);

  std::uint32_t layer_id() const noexcept { return layer_id_; }
  std::size_t channels() const noexcept { return channels_; }
  const NormConfig& config() const noexcept { return config_; }

  /// Trainable gamma then beta (1 x C x 1 x 1); empty when affine is off.
  std::vector<NodePtr<T>> parameters() const;
  const NodePtr<T>& gamma() const { return gamma_; }
  const NodePtr<T>& beta() const { return beta_; }
  StatsC& running() { return running_; }
  const StatsC& running() const { return running_; }

  /// Region used by the last WIN train forward (global for other kinds).
  const SampledRegion& last_region() const noexcept { return last_region_; }
  /// Mixing weights drawn by the last WIN train forward (N x C).
  const Tensor4<T>& last_lambda() const noexcept { return last_lambda_; }
  /// Mean absolute mean and mean variance of the last statistics, for diagnostics.
  std::pair<double, double> last_stats_summary() const noexcept { return last_summary_; }

 private:
  StatsNC<T> window_statistics(const Var<T>& f, const ForwardContext& ctx);
  void remember(const StatsNC<T>& s);

  std::uint32_t layer_id_;
  std::size_t channels_;
  NormConfig config_;
  NodePtr<T> gamma_;
  NodePtr<T> beta_;
  StatsC running_;
  SampledRegion last_region_;
  Tensor4<T> last_lambda_;
  std::pair<double, double> last_summary_{0.0, 0.0};
};

}  // namespace winnorm
