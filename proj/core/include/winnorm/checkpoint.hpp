#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "winnorm/model.hpp"

namespace winnorm {

struct Checkpoint {
  Model<float> model;
  nlohmann::json config;   // resolved run configuration
  nlohmann::json metrics;  // snapshot of the final epoch
  std::size_t epoch = 0;
};

/// Writes one WT4 file per parameter and per BN running buffer, plus manifest.json
/// holding the model spec, config, epoch, metric snapshot and per-file checksums.
void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model, const nlohmann::json& config,
                     std::size_t epoch, const nlohmann::json& metrics);

/// Rebuilds the model from the manifest spec and restores every tensor. Missing files,
/// checksum mismatches and shape disagreements raise IntegrityError.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace winnorm
