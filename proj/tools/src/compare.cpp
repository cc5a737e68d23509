#include <atomic>
#include <mutex>
#include <ostream>
#include <thread>

#include "winnorm/error.hpp"
#include "winnorm_cli/app.hpp"

namespace winnorm::cli {

MethodSpec builtin_method(const std::string& name) {
  if (name == "BN") return {name, {"norm.kind=BN", "train.trainer=single_pass"}};
  if (name == "IN") return {name, {"norm.kind=IN", "train.trainer=single_pass"}};
  if (name == "WIN") return {name, {"norm.kind=WIN", "train.trainer=single_pass"}};
  if (name == "WIN-WIN") return {name, {"norm.kind=WIN", "train.trainer=win_win"}};
  throw ConfigError("unknown method '" + name + "': give it explicit overrides in the matrix file");
}

CompareResult run_compare(const nlohmann::json& base_config, const std::vector<MethodSpec>& methods,
                          std::size_t seeds, const Dataset& dataset, std::size_t jobs,
                          const std::optional<std::filesystem::path>& out, std::ostream* log) {
  if (methods.empty()) throw ConfigError("comparison matrix lists no methods");
  if (seeds == 0) throw ConfigError("--seeds must be at least 1");
  CompareResult result;
  for (const auto& m : methods) {
    for (std::size_t s = 0; s < seeds; ++s) result.cells.push_back({m.name, s, false, {}, 0, {}});
  }
  std::mutex log_mutex;
  auto run_cell = [&](CompareCell& cell, const MethodSpec& method) {
    try {
      nlohmann::json doc = base_config;
      std::vector<std::string> overrides = method.overrides;
      overrides.push_back("train.seed=" + std::to_string(cell.seed));
      overrides.push_back("model.init_seed=" + std::to_string(cell.seed));
      apply_overrides(doc, overrides);
      const TrainOutcome outcome = train_run(run_config_from_json(doc), dataset);
      const std::string run_id = cell.method + "/seed" + std::to_string(cell.seed);
      if (out) write_run_outputs(*out / cell.method / ("seed" + std::to_string(cell.seed)), run_id, outcome);
      cell.accuracy = final_accuracies(outcome.record);
      cell.ok = true;
    } catch (const Error& e) {
      cell.error = e.what();
      cell.exit_code = static_cast<int>(e.error_class());
    } catch (const std::exception& e) {
      cell.error = e.what();
      cell.exit_code = 1;
    }
    if (log) {
      std::lock_guard lock(log_mutex);
      *log << cell.method << " seed " << cell.seed << ": ";
      if (cell.ok) {
        *log << "IND " << cell.accuracy["IND"];
        if (cell.accuracy.count("ood_mean")) *log << ", OOD mean " << cell.accuracy["ood_mean"];
      } else {
        *log << "FAILED (" << cell.error << ")";
      }
      *log << std::endl;
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) run_cell(result.cells[i], methods[i / seeds]);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, result.cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& m : methods) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& c : result.cells) {
      if (c.method != m.name || !c.ok) continue;
      for (const auto& [dataset_name, acc] : c.accuracy) values[dataset_name].push_back(acc);
    }
    auto& row = result.summary[m.name];
    for (const auto& [dataset_name, v] : values) row[dataset_name] = mean_std(v);
  }
  return result;
}

}  // namespace winnorm::cli
