#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "winnorm/checkpoint.hpp"
#include "winnorm/config.hpp"
#include "winnorm/dataset_io.hpp"
#include "winnorm/trainer.hpp"

namespace winnorm::cli {

// ---- reusable pipeline pieces -------------------------------------------------------------

struct TrainOutcome {
  Model<float> model;
  RunRecord record;
  RunConfig config;  // with num_classes resolved
};

/// Resolves the class count from the dataset, checks site names, builds and trains the model.
TrainOutcome train_run(RunConfig config, const Dataset& dataset);

/// Final-epoch accuracies keyed by split name plus "ood_mean" over the OOD splits.
std::map<std::string, double> final_accuracies(const RunRecord& record);

/// Writes config.echo.json, metrics.csv (fresh), summary.json and checkpoint/ under `dir`.
void write_run_outputs(const std::filesystem::path& dir, const std::string& run_id, const TrainOutcome& outcome);

/// Copy of `data` with every image corrupted; per-image randomness comes from (seed, kind, severity, index).
LabeledImages corrupt_split(const LabeledImages& data, const CorruptionSpec& spec, std::uint64_t seed,
                            const CorruptionTable& table);

/// Accuracy for every kind (rows, in kCorruptionKinds order) and severity 1..5 (columns).
std::vector<std::vector<double>> corruption_grid(Model<float>& model, const LabeledImages& data,
                                                 const CorruptionTable& table, std::uint64_t seed,
                                                 std::size_t batch_size = 250);

/// Mean and sample standard deviation (0 for a single value).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

// ---- compare --------------------------------------------------------------------------------

struct MethodSpec {
  std::string name;
  std::vector<std::string> overrides;
};

/// Built-in methods BN, IN, WIN and WIN-WIN; other names need explicit overrides in the matrix.
MethodSpec builtin_method(const std::string& name);

struct CompareCell {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  int exit_code = 0;
  std::map<std::string, double> accuracy;  // final epoch
};

struct CompareResult {
  std::vector<CompareCell> cells;
  /// method -> dataset -> mean/std over successful seeds
  std::map<std::string, std::map<std::string, MeanStd>> summary;
  bool all_ok() const;
};

/// Runs every (method, seed) cell: seed s sets train.seed = model.init_seed = s. With an
/// output directory each cell writes its own run outputs under out/<method>/seed<s>.
CompareResult run_compare(const nlohmann::json& base_config, const std::vector<MethodSpec>& methods,
                          std::size_t seeds, const Dataset& dataset, std::size_t jobs,
                          const std::optional<std::filesystem::path>& out, std::ostream* log = nullptr);

// ---- window benchmark -----------------------------------------------------------------------

enum class BenchMode { online, offline };

struct BenchOptions {
  std::size_t steps = 32;
  std::size_t repeats = 15;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  CnnSpec model;  // default CNN with WIN Window layers
};

struct BenchResult {
  BenchMode mode = BenchMode::online;
  std::vector<double> epoch_ms;
  double median_ms = 0.0;
};

/// Median wall time of a simulated epoch: per step and WIN layer, obtain the region
/// (draw it online, or replay a cache built before timing) and compute the window statistics.
BenchResult bench_windows(BenchMode mode, const BenchOptions& options);
/// Both modes over the same simulated epochs, timed call by call in alternating order so that
/// machine load and cache warmth fall on both alike. Returns {online, offline}; one untimed warm-up epoch.
std::pair<BenchResult, BenchResult> bench_windows_paired(const BenchOptions& options);

// ---- commands -------------------------------------------------------------------------------

struct GenDataArgs {
  std::filesystem::path out = "data";
  std::uint64_t seed = 0;
  std::vector<std::string> sites{"A", "B", "C", "D", "E"};
  std::size_t n_per_class = 625;
  bool binary = false;
};

struct TrainArgs {
  std::filesystem::path config;
  std::vector<std::string> overrides;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::vector<std::string> splits;  // empty: IND plus the configured OOD sites
  bool corruptions = false;
  std::filesystem::path out;  // empty: <checkpoint>/eval
};

struct CompareArgs {
  std::filesystem::path matrix;
  std::size_t seeds = 5;
  std::filesystem::path out = "runs/compare";
  std::size_t jobs = 1;
};

struct BenchArgs {
  std::string mode = "both";
  std::size_t steps = 32;
  std::size_t repeats = 15;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  std::filesystem::path out;  // optional JSON report
};

int cmd_gen_data(const GenDataArgs& args, std::ostream& log);
int cmd_train(const TrainArgs& args, std::ostream& log);
int cmd_eval(const EvalArgs& args, std::ostream& log);
int cmd_compare(const CompareArgs& args, std::ostream& log);
int cmd_bench_windows(const BenchArgs& args, std::ostream& log);

/// Parses argv, runs the command and maps errors to exit codes
/// (0 ok, 1 usage or config, 2 numerical abort, 3 integrity).
int run_main(int argc, char** argv);

}  // namespace winnorm::cli
