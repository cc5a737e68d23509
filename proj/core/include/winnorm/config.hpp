#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "winnorm/dataset_io.hpp"
#include "winnorm/model.hpp"
#include "winnorm/trainer.hpp"

namespace winnorm {

struct DataConfig {
  std::string dir = "data";
  std::vector<std::string> train_sites{"A"};
  std::vector<std::string> ood_sites{"B", "C", "D", "E"};
};

/// Everything one training run needs. `model.num_classes == 0` means "take it from the dataset".
struct RunConfig {
  DataConfig data;
  CnnSpec model;
  TrainConfig train;
  std::string out = "runs/default";

  RunConfig() { model.num_classes = 0; }
};

nlohmann::json to_json(const NormConfig& c);
nlohmann::json to_json(const CnnSpec& spec);  // includes the shared "norm" section
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Reads a complete document (as produced by to_json) or a partial one layered over
/// the defaults. Unknown keys anywhere raise ConfigError naming the offending path.
RunConfig run_config_from_json(const nlohmann::json& doc);
CnnSpec cnn_spec_from_json(const nlohmann::json& model, const nlohmann::json& norm);
NormConfig norm_config_from_json(const nlohmann::json& j, const NormConfig& base = {});
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Merges `patch` into `base`; every key in `patch` must already exist in `base`.
void strict_merge(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when possible and
/// otherwise taken as a string, so norm.kind=WIN and norm.tau=0.7 both work.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

/// Train split of every train site merged; their test splits form "IND"; each OOD site's test split is its own entry.
TrainData make_train_data(const Dataset& dataset, const DataConfig& data);

}  // namespace winnorm
