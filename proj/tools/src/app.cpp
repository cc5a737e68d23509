#include <algorithm>
#include <cmath>
#include <fstream>

#include "winnorm/error.hpp"
#include "winnorm_cli/app.hpp"

namespace winnorm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

TrainOutcome train_run(RunConfig config, const Dataset& dataset) {
  if (config.model.num_classes == 0) {
    config.model.num_classes = dataset.num_classes;
  } else if (config.model.num_classes != dataset.num_classes) {
    throw ConfigError("model.num_classes is " + std::to_string(config.model.num_classes) + " but the dataset has " +
                      std::to_string(dataset.num_classes) + " classes");
  }
  const TrainData data = make_train_data(dataset, config.data);
  Model<float> model(config.model);
  if (config.train.trainer == TrainerKind::win_win) require_win_win_compatible(model);
  RunRecord record = train(model, data, config.train);
  return {std::move(model), std::move(record), std::move(config)};
}

std::map<std::string, double> final_accuracies(const RunRecord& record) {
  std::map<std::string, double> out;
  if (record.epochs.empty()) return out;
  double ood = 0.0;
  std::size_t n_ood = 0;
  for (const auto& s : record.final_epoch().splits) {
    out[s.dataset] = s.accuracy;
    if (s.dataset != "IND") {
      ood += s.accuracy;
      ++n_ood;
    }
  }
  if (n_ood > 0) out["ood_mean"] = ood / static_cast<double>(n_ood);
  return out;
}

namespace {

std::string method_label(const RunConfig& c) {
  if (c.train.trainer == TrainerKind::win_win) return "WIN-WIN";
  return std::string(to_string(c.model.norm.kind));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw IntegrityError("failed writing " + path.string());
}

}  // namespace

void write_run_outputs(const fs::path& dir, const std::string& run_id, const TrainOutcome& outcome) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IntegrityError("cannot create " + dir.string() + ": " + ec.message());
  const json config = to_json(outcome.config);
  write_json(dir / "config.echo.json", config);

  fs::remove(dir / "metrics.csv", ec);
  append_metrics_csv(dir / "metrics.csv", outcome.record.metric_rows(run_id, outcome.config.train.seed));

  json summary;
  summary["run_id"] = run_id;
  summary["seed"] = outcome.config.train.seed;
  summary["method"] = method_label(outcome.config);
  summary["epochs"] = outcome.record.epochs.size();
  summary["accuracy"] = final_accuracies(outcome.record);
  json aucs = json::object();
  for (const auto& s : outcome.record.final_epoch().splits) {
    if (s.auc) aucs[s.dataset] = *s.auc;
  }
  summary["auc"] = aucs;
  summary["train_loss"] = outcome.record.final_epoch().train_loss;
  summary["parameters"] = outcome.model.parameter_count();
  write_json(dir / "summary.json", summary);

  save_checkpoint(dir / "checkpoint", outcome.model, config, outcome.record.epochs.size(), summary);
}

LabeledImages corrupt_split(const LabeledImages& data, const CorruptionSpec& spec, std::uint64_t seed,
                            const CorruptionTable& table) {
  const Dims d = data.images.dims();
  if (d.c != kImageChannels || d.h != kImageSide || d.w != kImageSide) throw ShapeError("corruption expects 3 x 32 x 32 images");
  LabeledImages out{Tensor4<float>(d), data.labels};
  const auto kind_index = static_cast<std::uint64_t>(
      std::find(kCorruptionKinds.begin(), kCorruptionKinds.end(), spec.kind) - kCorruptionKinds.begin());
  const Rng base = Rng(seed, Stream::corruption).fork(kind_index, static_cast<std::uint64_t>(spec.severity));
  auto dst = out.images.data();
  for (std::size_t i = 0; i < d.n; ++i) {
    Rng rng = base.fork(i);
    const auto img = corrupt(data.images.data().subspan(i * kImageSize, kImageSize), kImageChannels, kImageSide, spec,
                             rng, table);
    std::copy(img.begin(), img.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * kImageSize));
  }
  return out;
}

std::vector<std::vector<double>> corruption_grid(Model<float>& model, const LabeledImages& data,
                                                 const CorruptionTable& table, std::uint64_t seed,
                                                 std::size_t batch_size) {
  std::vector<std::vector<double>> grid;
  for (auto kind : kCorruptionKinds) {
    std::vector<double> row;
    for (int sev = 1; sev <= kSeverities; ++sev) {
      const LabeledImages corrupted = corrupt_split(data, {kind, sev}, seed, table);
      row.push_back(evaluate(model, corrupted, batch_size).accuracy);
    }
    grid.push_back(std::move(row));
  }
  return grid;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  double s = 0.0;
  for (double v : values) s += v;
  r.mean = s / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

bool CompareResult::all_ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const CompareCell& c) { return c.ok; });
}

}  // namespace winnorm::cli
