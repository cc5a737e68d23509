#include "winnorm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include <nlohmann/json.hpp>

#include "winnorm/error.hpp"
#include "winnorm/losses.hpp"
#include "winnorm/ops.hpp"
#include "winnorm/optim.hpp"

namespace winnorm {

LabeledImages LabeledImages::gather(std::span<const std::size_t> indices) const {
  const Dims d = images.dims();
  LabeledImages out{Tensor4<float>(Dims{indices.size(), d.c, d.h, d.w}), {}};
  out.labels.reserve(indices.size());
  const std::size_t row = d.c * d.h * d.w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ShapeError("gather index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(images.vec().begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                out.images.data().begin() + static_cast<std::ptrdiff_t>(i * row));
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

LabeledImages LabeledImages::concat(const std::vector<const LabeledImages*>& parts) {
  if (parts.empty()) return {};
  const Dims first = parts.front()->images.dims();
  std::size_t n = 0;
  for (const auto* p : parts) {
    const Dims d = p->images.dims();
    if (d.c != first.c || d.h != first.h || d.w != first.w) throw ShapeError("cannot concatenate " + d.str());
    n += d.n;
  }
  LabeledImages out{Tensor4<float>(Dims{n, first.c, first.h, first.w}), {}};
  auto it = out.images.data().begin();
  for (const auto* p : parts) {
    it = std::copy(p->images.vec().begin(), p->images.vec().end(), it);
    out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
  }
  return out;
}

TrainerKind parse_trainer_kind(std::string_view name) {
  if (name == "single_pass") return TrainerKind::single_pass;
  if (name == "win_win" || name == "WIN-WIN") return TrainerKind::win_win;
  throw ConfigError("unknown trainer '" + std::string(name) + "' (expected single_pass or win_win)");
}

std::string_view to_string(TrainerKind k) { return k == TrainerKind::single_pass ? "single_pass" : "win_win"; }

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(base_lr >= 0.0)) throw ConfigError("train.base_lr must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(delta >= 0.0)) throw ConfigError("train.delta must be non-negative");
  if (eval_every == 0 || eval_batch_size == 0) throw ConfigError("train.eval_every and eval_batch_size must be positive");
}

std::vector<MetricRow> RunRecord::metric_rows(const std::string& run_id, std::uint64_t seed) const {
  std::vector<MetricRow> rows;
  auto emit = [&](const EpochRecord& e, const std::string& suffix) {
    rows.push_back({run_id, seed, "lr" + suffix, "train", e.lr});
    rows.push_back({run_id, seed, "train_loss" + suffix, "train", e.train_loss});
    rows.push_back({run_id, seed, "train_accuracy" + suffix, "train", e.train_accuracy});
    rows.push_back({run_id, seed, "consistency" + suffix, "train", e.consistency});
    for (const auto& s : e.splits) {
      rows.push_back({run_id, seed, "accuracy" + suffix, s.dataset, s.accuracy});
      if (s.auc) rows.push_back({run_id, seed, "auc" + suffix, s.dataset, *s.auc});
    }
  };
  for (const auto& e : epochs) emit(e, "@" + std::to_string(e.epoch));
  if (!epochs.empty()) emit(epochs.back(), "");
  return rows;
}

template <typename T>
EvalResult evaluate(Model<T>& model, const LabeledImages& data, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  EvalResult out;
  const std::size_t n = data.size();
  const std::size_t k = model.spec().num_classes;
  out.predictions.reserve(n);
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    ids.resize(end - start);
    std::iota(ids.begin(), ids.end(), start);
    const LabeledImages batch = data.gather(ids);
    Tape<T> tape;
    NoGradGuard<T> guard(tape);
    const Var<T> logits = model.forward(tape, batch.images.template cast<T>(), Mode::eval, ForwardContext{});
    for (int p : argmax_rows(logits.value())) out.predictions.push_back(p);
    if (k == 2) {
      for (std::size_t i = 0; i < logits.dims().n; ++i) {
        out.scores.push_back(static_cast<double>(logits.value().at(i, 1)) - static_cast<double>(logits.value().at(i, 0)));
      }
    }
  }
  out.accuracy = accuracy(out.predictions, data.labels);
  if (k == 2) {
    const bool both = std::find(data.labels.begin(), data.labels.end(), 0) != data.labels.end() &&
                      std::find(data.labels.begin(), data.labels.end(), 1) != data.labels.end();
    if (both) out.auc = auc(out.scores, data.labels);
  }
  return out;
}

template <typename T>
StepLoss<T> single_pass_objective(Model<T>& model, Tape<T>& tape, const Tensor4<T>& x, std::span<const int> labels,
                                  const ForwardContext& ctx) {
  const Var<T> logits = model.forward(tape, x, Mode::train, ctx);
  return {cross_entropy(logits, labels), logits, {}};
}

template <typename T>
StepLoss<T> win_win_objective(Model<T>& model, Tape<T>& tape, const Tensor4<T>& x, std::span<const int> labels,
                              const ForwardContext& ctx, double delta, bool stop_grad_second) {
  const Var<T> mixed = model.forward(tape, x, Mode::train, ctx);
  Var<T> global;
  if (stop_grad_second) {
    NoGradGuard<T> guard(tape);
    global = model.forward(tape, x, Mode::eval, ctx);
  } else {
    global = model.forward(tape, x, Mode::eval, ctx);
  }
  const Var<T> consistency = jsd_consistency(mixed, global);
  return {total_loss(mixed, global, labels, delta), mixed, consistency};
}

template <typename T>
void require_win_win_compatible(const Model<T>& model) {
  for (const auto& n : model.norm_layers()) {
    if (n.config().kind == NormKind::bn) {
      throw ConfigError("trainer win_win cannot train BN layers: running statistics are ambiguous across two passes");
    }
    if (n.config().kind != NormKind::win) {
      throw ConfigError("trainer win_win needs every norm layer to be WIN, layer " + std::to_string(n.layer_id()) +
                        " is " + std::string(to_string(n.config().kind)));
    }
  }
}

void augment_in_place(Tensor4<float>& batch, std::uint64_t seed, std::uint64_t epoch,
                      std::span<const std::size_t> sample_ids, std::size_t pad) {
  const Dims d = batch.dims();
  if (sample_ids.size() != d.n) throw ShapeError("augment needs one sample id per image");
  const Rng base(seed, Stream::augment);
  std::vector<float> plane(d.plane());
  for (std::size_t n = 0; n < d.n; ++n) {
    Rng rng = base.fork(epoch, sample_ids[n]);
    const bool flip = rng.bernoulli(0.5);
    const auto dy = static_cast<std::ptrdiff_t>(rng.uniform_int(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    const auto dx = static_cast<std::ptrdiff_t>(rng.uniform_int(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    for (std::size_t c = 0; c < d.c; ++c) {
      auto p = batch.plane(n, c);
      std::copy(p.begin(), p.end(), plane.begin());
      for (std::size_t h = 0; h < d.h; ++h) {
        for (std::size_t w = 0; w < d.w; ++w) {
          const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h) + dy;
          std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w) + dx;
          if (flip) sw = static_cast<std::ptrdiff_t>(d.w) - 1 - sw;
          const bool inside = sh >= 0 && sw >= 0 && sh < static_cast<std::ptrdiff_t>(d.h) &&
                              sw < static_cast<std::ptrdiff_t>(d.w);
          p[h * d.w + w] = inside ? plane[static_cast<std::size_t>(sh) * d.w + static_cast<std::size_t>(sw)] : 0.0f;
        }
      }
    }
  }
}

namespace {

template <typename T>
std::string diagnostics_json(const Model<T>& model, std::size_t epoch, std::uint64_t step, double lr, double loss,
                             const std::string& cause) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = lr;
  j["loss"] = std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json(std::to_string(loss));
  j["cause"] = cause;
  auto& layers = j["layers"];
  layers = nlohmann::json::array();
  for (const auto& n : model.norm_layers()) {
    const auto [abs_mean, var] = n.last_stats_summary();
    layers.push_back({{"layer", n.layer_id()},
                      {"kind", std::string(to_string(n.config().kind))},
                      {"mean_abs_mean", abs_mean},
                      {"mean_var", var}});
  }
  return j.dump();
}

// Windows for an epoch, drawn up-front when every sampling WIN layer shares one strategy and ratio.
template <typename T>
std::optional<WindowCache> epoch_cache(const Model<T>& model, const TrainConfig& cfg, std::uint64_t first_step,
                                       std::uint64_t steps) {
  if (!cfg.offline_windows) return std::nullopt;
  const EpochSchedule schedule = model.window_schedule(first_step, steps);
  if (schedule.layers.empty()) return std::nullopt;
  const NormConfig& ref = model.norm_layers()[schedule.layers.front().layer_id].config();
  for (const auto& l : schedule.layers) {
    const NormConfig& c = model.norm_layers()[l.layer_id].config();
    if (c.strategy != ref.strategy || c.tau != ref.tau || c.share_window_across_layers != ref.share_window_across_layers) {
      throw ConfigError("offline windows need one strategy and tau shared by every WIN layer");
    }
  }
  return WindowCache::build(cfg.seed, schedule, ref.tau, ref.strategy, ref.share_window_across_layers);
}

template <typename T>
RunRecord run_training(Model<T>& model, const TrainData& data, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.train.size();
  if (n == 0) throw ConfigError("training split is empty");
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const LrSchedule schedule(cfg.base_lr > 0.0 ? cfg.base_lr : 1.0, cfg.warmup_epochs, cfg.epochs, steps_per_epoch);
  Sgd<T> sgd(model.parameters(), SgdConfig{cfg.momentum, cfg.weight_decay, true});
  const bool win_win = cfg.trainer == TrainerKind::win_win;

  RunRecord record;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = Rng(cfg.seed, Stream::shuffle).fork(epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_int(i)]);

    const std::uint64_t first_step = epoch * steps_per_epoch;
    const std::optional<WindowCache> cache = epoch_cache(model, cfg, first_step, steps_per_epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0, jsd_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::uint64_t step = first_step + s;
      const double lr = cfg.base_lr > 0.0 ? schedule.at(step) : 0.0;
      const std::size_t lo = s * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const std::span<const std::size_t> ids(order.data() + lo, hi - lo);
      LabeledImages batch = data.train.gather(ids);
      if (cfg.augment) augment_in_place(batch.images, cfg.seed, epoch, ids);

      const ForwardContext ctx{cfg.seed, step, cache ? &*cache : nullptr};
      Tape<T> tape;
      double loss = 0.0;
      try {
        const StepLoss<T> out = win_win ? win_win_objective(model, tape, batch.images.template cast<T>(), batch.labels,
                                                            ctx, cfg.delta, cfg.stop_grad_second_pass)
                                        : single_pass_objective(model, tape, batch.images.template cast<T>(),
                                                                batch.labels, ctx);
        loss = static_cast<double>(out.loss.item());
        if (!std::isfinite(loss)) throw DegenerateInputError("non-finite loss");
        model.zero_grad();
        tape.backward(out.loss);
        for (const auto& p : model.parameters()) {
          if (!p->grad.empty()) require_finite<T>(std::as_const(p->grad).data(), "parameter gradient");
        }
        if (out.consistency) jsd_sum += static_cast<double>(out.consistency.item()) * static_cast<double>(ids.size());
        const auto preds = argmax_rows(out.logits.value());
        for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == batch.labels[i] ? 1 : 0;
        sgd.step(lr);
        for (const auto& p : model.parameters()) require_finite<T>(std::as_const(p->value).data(), "parameter");
      } catch (const DegenerateInputError& e) {
        throw NumericalAbort("training aborted at step " + std::to_string(step) + ": " + e.what(),
                             diagnostics_json(model, epoch, step, lr, loss, e.what()));
      }
      loss_sum += loss * static_cast<double>(ids.size());
      rec.lr = lr;
    }
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    rec.consistency = jsd_sum / static_cast<double>(n);

    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      std::vector<const NamedSplit*> splits;
      if (data.val.data.size() > 0) splits.push_back(&data.val);
      for (const auto& o : data.ood) splits.push_back(&o);
      try {
        for (const auto* sp : splits) {
          const EvalResult r = evaluate(model, sp->data, cfg.eval_batch_size);
          rec.splits.push_back({sp->name, r.accuracy, r.auc});
        }
      } catch (const DegenerateInputError& e) {
        const std::uint64_t last = first_step + steps_per_epoch - 1;
        throw NumericalAbort("evaluation after epoch " + std::to_string(epoch) + " failed: " + e.what(),
                             diagnostics_json(model, epoch, last, rec.lr, rec.train_loss, e.what()));
      }
    }
    record.epochs.push_back(std::move(rec));
  }
  return record;
}

}  // namespace

template <typename T>
RunRecord train_single_pass(Model<T>& model, const TrainData& data, const TrainConfig& config) {
  if (config.trainer != TrainerKind::single_pass) throw ConfigError("train_single_pass needs trainer = single_pass");
  return run_training(model, data, config);
}

template <typename T>
RunRecord train_win_win(Model<T>& model, const TrainData& data, const TrainConfig& config) {
  if (config.trainer != TrainerKind::win_win) throw ConfigError("train_win_win needs trainer = win_win");
  require_win_win_compatible(model);
  return run_training(model, data, config);
}

template <typename T>
RunRecord train(Model<T>& model, const TrainData& data, const TrainConfig& config) {
  return config.trainer == TrainerKind::win_win ? train_win_win(model, data, config)
                                                : train_single_pass(model, data, config);
}

#define WINNORM_INSTANTIATE_TRAINER(T)                                                                         \
  template EvalResult evaluate<T>(Model<T>&, const LabeledImages&, std::size_t);                              \
  template StepLoss<T> single_pass_objective<T>(Model<T>&, Tape<T>&, const Tensor4<T>&, std::span<const int>, \
                                                const ForwardContext&);                                        \
  template StepLoss<T> win_win_objective<T>(Model<T>&, Tape<T>&, const Tensor4<T>&, std::span<const int>,     \
                                            const ForwardContext&, double, bool);                              \
  template void require_win_win_compatible<T>(const Model<T>&);                                                \
  template RunRecord train_single_pass<T>(Model<T>&, const TrainData&, const TrainConfig&);                    \
  template RunRecord train_win_win<T>(Model<T>&, const TrainData&, const TrainConfig&);                        \
  template RunRecord train<T>(Model<T>&, const TrainData&, const TrainConfig&);

WINNORM_INSTANTIATE_TRAINER(float)
WINNORM_INSTANTIATE_TRAINER(double)

}  // namespace winnorm
