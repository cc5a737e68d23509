#include "winnorm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "winnorm/error.hpp"

namespace winnorm {

template <typename T>
Sgd<T>::Sgd(std::vector<NodePtr<T>> params, SgdConfig config) : params_(std::move(params)), config_(config) {
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (config_.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p->value.size(), 0.0);
}

template <typename T>
void Sgd<T>::step(double lr) {
  const double mu = config_.momentum;
  const double wd = config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    auto& v = velocity_[k];
    const bool has_grad = !p.grad.empty();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double d = (has_grad ? static_cast<double>(p.grad[i]) : 0.0) + wd * static_cast<double>(p.value[i]);
      v[i] = mu * v[i] + d;
      d = config_.nesterov ? d + mu * v[i] : v[i];
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - lr * d);
    }
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template class Sgd<float>;
template class Sgd<double>;

LrSchedule::LrSchedule(double base_lr, std::size_t warmup_epochs, std::size_t epochs, std::size_t steps_per_epoch)
    : base_(base_lr), steps_per_epoch_(steps_per_epoch), total_(epochs * steps_per_epoch) {
  if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
  if (epochs == 0 || steps_per_epoch == 0) throw ConfigError("schedule needs at least one epoch and one step");
  warmup_ = std::min(warmup_epochs * steps_per_epoch, total_);
}

double LrSchedule::at(std::size_t t) const {
  if (t < warmup_) return base_ * static_cast<double>(t + 1) / static_cast<double>(warmup_);
  if (t >= total_) return 0.0;
  const double progress = static_cast<double>(t - warmup_) / static_cast<double>(total_ - warmup_);
  return 0.5 * base_ * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace winnorm
