#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "winnorm/tensor.hpp"

namespace winnorm {

/// Row-wise argmax of an N x K x 1 x 1 logit tensor.
template <typename T>
std::vector<int> argmax_rows(const Tensor4<T>& logits);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Mann-Whitney AUC with tied scores counted as one half. Labels are 0/1 and both
/// classes must be present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Mean over datasets of model AUC / reference AUC. Key sets must match.
double m_cauc(const std::map<std::string, double>& model_auc, const std::map<std::string, double>& reference_auc);

/// Mean of (1 - accuracy) over a corruption x severity accuracy grid.
double mean_corruption_error(const std::vector<std::vector<double>>& accuracy_grid);

/// One long-form metric row: run_id, seed, metric, dataset, value.
struct MetricRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string metric;
  std::string dataset;
  double value = 0.0;
};

inline constexpr const char* kMetricsCsvHeader = "run_id,seed,metric,dataset,value";

/// Appends rows to `path`, writing the header when the file is new or empty.
void append_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace winnorm
