#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "winnorm/corruption.hpp"
#include "winnorm/data_synth.hpp"

namespace winnorm {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const std::byte> bytes) noexcept;
/// FNV-1a of a whole file, as 16 lower-case hex digits. Throws IntegrityError if unreadable.
std::string file_checksum(const std::filesystem::path& path);

struct SiteSplit {
  std::string site;
  std::string split;  // "train" or "test"
  LabeledImages data;
  std::vector<Geometry> geometry;
};

struct Dataset {
  std::uint64_t seed = 0;
  std::size_t num_classes = kShapeClasses;
  std::vector<SiteStyle> styles;
  std::vector<SiteSplit> splits;
  CorruptionTable corruptions = CorruptionTable::defaults();

  const SiteSplit& find(const std::string& site, const std::string& split) const;
  bool has(const std::string& site, const std::string& split) const;
  std::vector<std::string> sites() const;
};

struct GenerateOptions {
  std::uint64_t seed = 0;
  std::vector<std::string> sites{"A", "B", "C", "D", "E"};
  std::size_t n_per_class = 625;
  bool binary = false;  // disk vs square
  double train_fraction = 0.8;
};

/// One gen_site_dataset call per site (site k draws from Rng(seed, data).fork(k)), then an
/// index split: the first train_fraction of each site's samples become "train".
Dataset generate_dataset(const GenerateOptions& options);

/// manifest.json + {site}_{split}.wt4 + {site}_{split}_labels.csv + corruptions.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
/// Validates manifest structure, file presence, checksums, tensor shapes and labels.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace winnorm
