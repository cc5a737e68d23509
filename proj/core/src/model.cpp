#include "winnorm/model.hpp"

#include <cmath>

#include "winnorm/error.hpp"
#include "winnorm/ops.hpp"

namespace winnorm {

void CnnSpec::validate() const {
  if (stages.empty()) throw ConfigError("model needs at least one stage");
  if (convs_per_stage == 0) throw ConfigError("model.convs_per_stage must be positive");
  if (num_classes < 2) throw ConfigError("model.num_classes must be at least 2");
  if (in_channels == 0 || input.h == 0 || input.w == 0) throw ConfigError("model input dims must be positive");
  for (const auto& s : stages) {
    if (s.channels == 0) throw ConfigError("stage channels must be positive");
  }
  norm.validate();
  for (const auto& s : stages) {
    if (s.norm) s.norm->validate();
  }
}

std::vector<LayerPlan> plan_layers(const CnnSpec& spec) {
  spec.validate();
  std::vector<LayerPlan> plan;
  std::size_t channels = spec.in_channels;
  PlaneDims dims = spec.input;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    for (std::size_t j = 0; j < spec.convs_per_stage; ++j) {
      const bool down = spec.stages[s].downsample && j == 0;
      if (down) {
        if (dims.h < 2 || dims.w < 2) {
          throw ConfigError("stage " + std::to_string(s) + " downsamples a plane that has already collapsed to " +
                            std::to_string(dims.h) + "x" + std::to_string(dims.w));
        }
        dims = {(dims.h - 1) / 2 + 1, (dims.w - 1) / 2 + 1};
      }
      plan.push_back(LayerPlan{channels, spec.stages[s].channels, down ? 2 : 1, dims, spec.stage_norm(s)});
      channels = spec.stages[s].channels;
    }
  }
  return plan;
}

template <typename T>
Model<T>::Model(CnnSpec spec) : spec_(std::move(spec)), plan_(plan_layers(spec_)) {
  const Rng init(spec_.init_seed, Stream::init);
  std::uint64_t index = 0;
  auto he_normal = [&](Dims d, std::size_t fan_in) {
    Rng rng = init.fork(index++);
    Tensor4<T> t(d);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(0.0, std));
    return make_node(std::move(t), true);
  };
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const auto& p = plan_[i];
    kernels_.push_back(he_normal(Dims{p.out_channels, p.in_channels, 3, 3}, p.in_channels * 9));
    norms_.emplace_back(static_cast<std::uint32_t>(i), p.out_channels, p.norm);
  }
  const std::size_t features = plan_.back().out_channels;
  head_w_ = he_normal(Dims{features, spec_.num_classes, 1, 1}, features);
  head_b_ = make_node(Tensor4<T>(Dims{1, spec_.num_classes, 1, 1}), true);
}

template <typename T>
Var<T> Model<T>::forward(Tape<T>& tape, const Tensor4<T>& images, Mode mode, const ForwardContext& ctx) {
  const Dims d = images.dims();
  if (d.c != spec_.in_channels || d.h != spec_.input.h || d.w != spec_.input.w) {
    throw ShapeError("model expects N x " + std::to_string(spec_.in_channels) + " x " + std::to_string(spec_.input.h) +
                     " x " + std::to_string(spec_.input.w) + " images, got " + d.str());
  }
  Var<T> x = tape.constant(images);
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    x = ops::conv2d(x, tape.watch(kernels_[i]), plan_[i].stride, 1);
    x = norms_[i].forward(x, mode, ctx);
    x = ops::relu(x);
  }
  return ops::linear(ops::global_avgpool(x), tape.watch(head_w_), tape.watch(head_b_));
}

template <typename T>
std::vector<NodePtr<T>> Model<T>::parameters() const {
  std::vector<NodePtr<T>> out(kernels_.begin(), kernels_.end());
  for (const auto& n : norms_) {
    for (auto& p : n.parameters()) out.push_back(p);
  }
  out.push_back(head_w_);
  out.push_back(head_b_);
  return out;
}

template <typename T>
std::vector<std::string> Model<T>::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < kernels_.size(); ++i) names.push_back("conv" + std::to_string(i) + ".weight");
  for (const auto& n : norms_) {
    if (!n.parameters().empty()) {
      names.push_back("norm" + std::to_string(n.layer_id()) + ".gamma");
      names.push_back("norm" + std::to_string(n.layer_id()) + ".beta");
    }
  }
  names.push_back("head.weight");
  names.push_back("head.bias");
  return names;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p->value.size();
  return total;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p->zero_grad();
}

template <typename T>
bool Model<T>::uses(NormKind kind) const {
  for (const auto& n : norms_) {
    if (n.config().kind == kind) return true;
  }
  return false;
}

template <typename T>
EpochSchedule Model<T>::window_schedule(std::uint64_t first_step, std::uint64_t steps) const {
  EpochSchedule schedule{first_step, steps, {}};
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const auto& cfg = plan_[i].norm;
    if (cfg.kind != NormKind::win) continue;
    if (cfg.strategy == Strategy::global || cfg.strategy == Strategy::speckle) continue;
    LayerSchedule layer{static_cast<std::uint32_t>(i), plan_[i].out_dims, std::nullopt};
    if (cfg.strategy == Strategy::block) layer.partition = BlockPartition(cfg.block_input, cfg.block_patch, plan_[i].out_dims);
    schedule.layers.push_back(std::move(layer));
  }
  return schedule;
}

template class Model<float>;
template class Model<double>;

}  // namespace winnorm
