#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "winnorm/metrics.hpp"
#include "winnorm/model.hpp"

namespace winnorm {

/// Images N x 3 x H x W in [0, 1] with one class label per image.
struct LabeledImages {
  Tensor4<float> images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  /// Rows `indices` gathered into a new batch.
  LabeledImages gather(std::span<const std::size_t> indices) const;
  /// Concatenation along the batch axis.
  static LabeledImages concat(const std::vector<const LabeledImages*>& parts);
};

struct NamedSplit {
  std::string name;
  LabeledImages data;
};

struct TrainData {
  LabeledImages train;
  NamedSplit val{"IND", {}};
  std::vector<NamedSplit> ood;
};

enum class TrainerKind { single_pass, win_win };
TrainerKind parse_trainer_kind(std::string_view name);
std::string_view to_string(TrainerKind k);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double base_lr = 3e-3;
  std::size_t warmup_epochs = 5;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double delta = 0.3;
  std::uint64_t seed = 0;
  TrainerKind trainer = TrainerKind::single_pass;
  bool stop_grad_second_pass = false;
  bool augment = true;
  /// Replay each epoch's windows from a pre-built cache instead of drawing them per step.
  bool offline_windows = false;
  /// Evaluate every k-th epoch; the last epoch is always evaluated.
  std::size_t eval_every = 1;
  std::size_t eval_batch_size = 250;

  void validate() const;
};

struct SplitMetrics {
  std::string dataset;
  double accuracy = 0.0;
  std::optional<double> auc;
  bool operator==(const SplitMetrics&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;  // rate of the epoch's last step
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double consistency = 0.0;  // mean JSD term, zero for single-pass
  std::vector<SplitMetrics> splits;  // empty when the epoch was not evaluated
  bool operator==(const EpochRecord&) const = default;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;

  const EpochRecord& final_epoch() const { return epochs.back(); }
  /// Long-form rows for every epoch. Metric names carry the epoch, e.g. "val_accuracy@3";
  /// rows of the final epoch are also emitted without the suffix.
  std::vector<MetricRow> metric_rows(const std::string& run_id, std::uint64_t seed) const;
  bool operator==(const RunRecord&) const = default;
};

struct EvalResult {
  double accuracy = 0.0;
  std::optional<double> auc;  // binary tasks only; score is logit1 - logit0
  std::vector<int> predictions;
  std::vector<double> scores;
};

/// Eval-mode predictions in chunks of `batch_size`; no tape is recorded.
template <typename T>
EvalResult evaluate(Model<T>& model, const LabeledImages& data, std::size_t batch_size = 250);

template <typename T>
struct StepLoss {
  Var<T> loss;
  Var<T> logits;       // train-mode (mixed-statistics) logits
  Var<T> consistency;  // JSD term; empty for single-pass
};

/// Train-mode forward and cross-entropy.
template <typename T>
StepLoss<T> single_pass_objective(Model<T>& model, Tape<T>& tape, const Tensor4<T>& x, std::span<const int> labels,
                                  const ForwardContext& ctx);

/// Pass 1 in train mode, pass 2 on the same batch with evaluation statistics, combined as
/// 0.5 * (CE1 + CE2) + delta * JSD. With stop_grad_second the second pass is a constant target.
template <typename T>
StepLoss<T> win_win_objective(Model<T>& model, Tape<T>& tape, const Tensor4<T>& x, std::span<const int> labels,
                              const ForwardContext& ctx, double delta, bool stop_grad_second = false);

/// Throws ConfigError unless every norm layer is WIN.
template <typename T>
void require_win_win_compatible(const Model<T>& model);

template <typename T>
RunRecord train_single_pass(Model<T>& model, const TrainData& data, const TrainConfig& config);
template <typename T>
RunRecord train_win_win(Model<T>& model, const TrainData& data, const TrainConfig& config);
/// Dispatches on config.trainer.
template <typename T>
RunRecord train(Model<T>& model, const TrainData& data, const TrainConfig& config);

/// Flip with probability 0.5, then a random crop from the image zero-padded by `pad` pixels.
void augment_in_place(Tensor4<float>& batch, std::uint64_t seed, std::uint64_t epoch,
                      std::span<const std::size_t> sample_ids, std::size_t pad = 4);

}  // namespace winnorm
