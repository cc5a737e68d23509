#include "winnorm/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "winnorm/error.hpp"

namespace winnorm {

template <typename T>
std::vector<int> argmax_rows(const Tensor4<T>& logits) {
  const Dims d = logits.dims();
  std::vector<int> out(d.n, 0);
  for (std::size_t n = 0; n < d.n; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < d.c; ++k) {
      if (logits.at(n, k) > logits.at(n, best)) best = k;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

template std::vector<int> argmax_rows<float>(const Tensor4<float>&);
template std::vector<int> argmax_rows<double>(const Tensor4<double>&);

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || labels.empty()) throw ShapeError("accuracy needs equal, non-empty inputs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ConfigError("auc labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw ConfigError("auc needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average 1-based ranks over tie groups, then the rank-sum form of Mann-Whitney U.
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) positive_rank_sum += rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double m_cauc(const std::map<std::string, double>& model_auc, const std::map<std::string, double>& reference_auc) {
  if (model_auc.empty()) throw ConfigError("m_cauc needs at least one dataset");
  if (model_auc.size() != reference_auc.size()) throw ConfigError("m_cauc: dataset sets differ");
  double sum = 0.0;
  for (const auto& [name, value] : model_auc) {
    const auto it = reference_auc.find(name);
    if (it == reference_auc.end()) throw ConfigError("m_cauc: reference has no dataset '" + name + "'");
    if (!(it->second > 0.0)) throw ConfigError("m_cauc: reference AUC for '" + name + "' is not positive");
    sum += value / it->second;
  }
  return sum / static_cast<double>(model_auc.size());
}

double mean_corruption_error(const std::vector<std::vector<double>>& accuracy_grid) {
  double sum = 0.0;
  std::size_t cells = 0;
  for (const auto& row : accuracy_grid) {
    for (double a : row) {
      if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("corruption accuracy outside [0, 1]");
      sum += 1.0 - a;
      ++cells;
    }
  }
  if (cells == 0) throw ConfigError("mean_corruption_error of an empty grid");
  return sum / static_cast<double>(cells);
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void append_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw IntegrityError("cannot open " + path.string());
  if (fresh) os << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.run_id << ',' << r.seed << ',' << r.metric << ',' << r.dataset << ',' << format_double(r.value) << '\n';
  }
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IntegrityError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != kMetricsCsvHeader) throw IntegrityError("unexpected metrics header in " + path.string());
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string seed, value;
    if (!std::getline(ss, r.run_id, ',') || !std::getline(ss, seed, ',') || !std::getline(ss, r.metric, ',') ||
        !std::getline(ss, r.dataset, ',') || !std::getline(ss, value)) {
      throw IntegrityError("malformed metrics row: " + line);
    }
    r.seed = std::stoull(seed);
    r.value = std::stod(value);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace winnorm
