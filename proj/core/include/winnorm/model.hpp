#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "winnorm/autodiff.hpp"
#include "winnorm/normalization.hpp"
#include "winnorm/window_sampling.hpp"

namespace winnorm {

struct StageSpec {
  std::size_t channels = 32;
  bool downsample = false;
  /// Overrides CnnSpec::norm for every norm layer of this stage.
  std::optional<NormConfig> norm;
};

/// Stages of [3x3 conv -> norm -> ReLU] x convs_per_stage, the first conv of a
/// downsampling stage using stride 2; then global average pooling and a linear head.
struct CnnSpec {
  std::size_t in_channels = 3;
  PlaneDims input{32, 32};
  std::vector<StageSpec> stages{{32, false, std::nullopt}, {64, true, std::nullopt}, {128, true, std::nullopt}};
  std::size_t convs_per_stage = 2;
  std::size_t num_classes = 4;
  NormConfig norm;
  std::uint64_t init_seed = 0;

  const NormConfig& stage_norm(std::size_t stage) const { return stages[stage].norm ? *stages[stage].norm : norm; }
  void validate() const;
};

/// Geometry of one conv + norm unit after shape propagation.
struct LayerPlan {
  std::size_t in_channels;
  std::size_t out_channels;
  int stride;
  PlaneDims out_dims;
  NormConfig norm;
};

/// Throws ConfigError if the spec is invalid or its planes collapse before the head.
std::vector<LayerPlan> plan_layers(const CnnSpec& spec);

template <typename T>
class Model {
 public:
  explicit Model(CnnSpec spec);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Logits N x K x 1 x 1 for images N x in_channels x H x W.
  Var<T> forward(Tape<T>& tape, const Tensor4<T>& images, Mode mode, const ForwardContext& ctx);

  /// Every trainable node in a fixed order: conv kernels, norm affine params, head weight, head bias.
  std::vector<NodePtr<T>> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
  void zero_grad();

  const CnnSpec& spec() const noexcept { return spec_; }
  std::vector<NormLayer<T>>& norm_layers() noexcept { return norms_; }
  const std::vector<NormLayer<T>>& norm_layers() const noexcept { return norms_; }
  const std::vector<NodePtr<T>>& conv_kernels() const noexcept { return kernels_; }
  const NodePtr<T>& head_weight() const noexcept { return head_w_; }
  const NodePtr<T>& head_bias() const noexcept { return head_b_; }

  bool uses(NormKind kind) const;
  /// WIN layers and their feature planes, for building a window cache over [first_step, first_step + steps).
  EpochSchedule window_schedule(std::uint64_t first_step, std::uint64_t steps) const;

 private:
  CnnSpec spec_;
  std::vector<LayerPlan> plan_;
  std::vector<NodePtr<T>> kernels_;
  std::vector<NormLayer<T>> norms_;
  NodePtr<T> head_w_;
  NodePtr<T> head_b_;
};

}  // namespace winnorm
