#pragma once

#include <cstddef>
#include <vector>

#include "winnorm/autodiff.hpp"

namespace winnorm {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-5;
  bool nesterov = true;
};

/// Momentum SGD with decoupled velocity per parameter:
///   d = g + wd * p;  v = mu * v + d;  d = nesterov ? d + mu * v : v;  p -= lr * d.
/// Parameters without an accumulated gradient still receive weight decay.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<NodePtr<T>> params, SgdConfig config);

  void step(double lr);
  void zero_grad();
  const SgdConfig& config() const noexcept { return config_; }

 private:
  std::vector<NodePtr<T>> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig config_;
};

/// Linear warmup to base_lr over the first warmup_epochs, then half-cosine decay reaching
/// zero at the last step. Warmup longer than the run is clamped to the run length.
class LrSchedule {
 public:
  LrSchedule(double base_lr, std::size_t warmup_epochs, std::size_t epochs, std::size_t steps_per_epoch);

  double at(std::size_t global_step) const;
  double at(std::size_t epoch, std::size_t step) const { return at(epoch * steps_per_epoch_ + step); }
  std::size_t total_steps() const noexcept { return total_; }
  std::size_t warmup_steps() const noexcept { return warmup_; }

 private:
  double base_;
  std::size_t steps_per_epoch_;
  std::size_t total_;
  std::size_t warmup_;
};

}  // namespace winnorm
