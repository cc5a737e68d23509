#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "winnorm/error.hpp"
#include "winnorm_cli/app.hpp"

namespace winnorm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw IntegrityError("failed writing " + path.string());
}

json read_json(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(std::string(what) + " " + path.string() + " is not valid JSON");
  return j;
}

std::string run_id_for(const fs::path& dir) {
  const fs::path p = dir.has_filename() ? dir : dir.parent_path();
  return p.filename().string().empty() ? "run" : p.filename().string();
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args, std::ostream& log) {
  GenerateOptions opt;
  opt.seed = args.seed;
  opt.sites = args.sites;
  opt.n_per_class = args.n_per_class;
  opt.binary = args.binary;
  const Dataset ds = generate_dataset(opt);
  write_dataset(args.out, ds);
  const Dataset check = read_dataset(args.out);
  for (const auto& s : check.splits) {
    log << s.site << "/" << s.split << ": " << s.data.size() << " images\n";
  }
  log << "wrote " << (args.binary ? "binary" : "4-class") << " dataset with " << check.splits.size() << " splits to "
      << args.out.string() << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args, std::ostream& log) {
  const RunConfig config = load_run_config(args.config, args.overrides);
  const fs::path out = config.out;
  fs::create_directories(out);
  write_json(out / "config.echo.json", to_json(config));
  const Dataset ds = read_dataset(config.data.dir);
  try {
    const TrainOutcome outcome = train_run(config, ds);
    write_run_outputs(out, run_id_for(out), outcome);
    for (const auto& e : outcome.record.epochs) {
      log << "epoch " << e.epoch << "  lr " << e.lr << "  loss " << e.train_loss << "  train acc " << e.train_accuracy;
      for (const auto& s : e.splits) log << "  " << s.dataset << " " << s.accuracy;
      log << "\n";
    }
    log << "outputs in " << out.string() << "\n";
  } catch (const NumericalAbort& e) {
    write_json(out / "diagnostics.json", json::parse(e.diagnostics()));
    throw;
  }
  return 0;
}

int cmd_eval(const EvalArgs& args, std::ostream& log) {
  Checkpoint ck = load_checkpoint(args.checkpoint);
  const RunConfig config = run_config_from_json(ck.config);
  const Dataset ds = read_dataset(args.data);
  if (ds.num_classes != ck.model.spec().num_classes) {
    throw ConfigError("checkpoint predicts " + std::to_string(ck.model.spec().num_classes) +
                      " classes but the dataset has " + std::to_string(ds.num_classes));
  }
  std::vector<std::string> splits = args.splits;
  if (splits.empty()) {
    splits.push_back("IND");
    for (const auto& s : config.data.ood_sites) splits.push_back(s);
  }
  const TrainData ind = make_train_data(ds, DataConfig{config.data.dir, config.data.train_sites, {}});
  auto resolve = [&](const std::string& name) -> LabeledImages {
    if (name == "IND") return ind.val.data;
    const auto slash = name.find('/');
    if (slash != std::string::npos) {
      if (!ds.has(name.substr(0, slash), name.substr(slash + 1))) throw ConfigError("dataset has no split " + name);
      return ds.find(name.substr(0, slash), name.substr(slash + 1)).data;
    }
    if (!ds.has(name, "test")) throw ConfigError("dataset has no split " + name + "/test");
    return ds.find(name, "test").data;
  };

  const std::string run_id = run_id_for(args.checkpoint.parent_path().empty() ? args.checkpoint
                                                                               : args.checkpoint.parent_path());
  const std::uint64_t seed = config.train.seed;
  std::vector<MetricRow> rows;
  json summary;
  double ood_sum = 0.0;
  std::size_t ood_n = 0;
  for (const auto& name : splits) {
    const EvalResult r = evaluate(ck.model, resolve(name), config.train.eval_batch_size);
    rows.push_back({run_id, seed, "accuracy", name, r.accuracy});
    summary["accuracy"][name] = r.accuracy;
    if (r.auc) {
      rows.push_back({run_id, seed, "auc", name, *r.auc});
      summary["auc"][name] = *r.auc;
    }
    if (name != "IND") {
      ood_sum += r.accuracy;
      ++ood_n;
    }
    log << std::left << std::setw(10) << name << " accuracy " << r.accuracy;
    if (r.auc) log << "  auc " << *r.auc;
    log << "\n";
  }
  if (ood_n > 0) {
    const double mean = ood_sum / static_cast<double>(ood_n);
    rows.push_back({run_id, seed, "accuracy", "ood_mean", mean});
    summary["accuracy"]["ood_mean"] = mean;
    log << "OOD mean accuracy " << mean << " over " << ood_n << " splits\n";
  }
  if (args.corruptions) {
    const auto grid = corruption_grid(ck.model, ind.val.data, ds.corruptions, ds.seed, config.train.eval_batch_size);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      for (std::size_t s = 0; s < grid[k].size(); ++s) {
        const std::string cell = std::string(to_string(kCorruptionKinds[k])) + "/" + std::to_string(s + 1);
        rows.push_back({run_id, seed, "corruption_accuracy", cell, grid[k][s]});
        summary["corruption_accuracy"][cell] = grid[k][s];
      }
    }
    const double mce = mean_corruption_error(grid);
    rows.push_back({run_id, seed, "mean_corruption_error", "IND", mce});
    summary["mean_corruption_error"] = mce;
    log << "mean corruption error " << mce << " over " << grid.size() * kSeverities << " cells\n";
  }
  const fs::path out = args.out.empty() ? args.checkpoint / "eval" : args.out;
  fs::create_directories(out);
  std::error_code ec;
  fs::remove(out / "metrics.csv", ec);
  append_metrics_csv(out / "metrics.csv", rows);
  write_json(out / "summary.json", summary);
  return 0;
}

int cmd_compare(const CompareArgs& args, std::ostream& log) {
  const json matrix = read_json(args.matrix, "matrix");
  if (!matrix.is_object()) throw ConfigError("matrix file must hold a JSON object");
  for (const auto& [key, value] : matrix.items()) {
    if (key != "base" && key != "methods") throw ConfigError("unknown matrix key '" + key + "'");
  }
  const json base = matrix.value("base", json::object());
  std::vector<MethodSpec> methods;
  for (const auto& m : matrix.value("methods", json::array({"BN", "IN", "WIN", "WIN-WIN"}))) {
    if (m.is_string()) {
      methods.push_back(builtin_method(m.get<std::string>()));
    } else {
      methods.push_back({m.at("name").get<std::string>(), m.value("overrides", std::vector<std::string>{})});
    }
  }
  const RunConfig resolved = run_config_from_json(base);
  const Dataset ds = read_dataset(resolved.data.dir);
  fs::create_directories(args.out);
  write_json(args.out / "config.echo.json",
             {{"matrix", matrix}, {"seeds", args.seeds}, {"jobs", args.jobs}, {"base_resolved", to_json(resolved)}});

  const CompareResult result = run_compare(base, methods, args.seeds, ds, args.jobs, args.out, &log);

  std::vector<MetricRow> rows;
  json summary;
  for (const auto& c : result.cells) {
    const std::string run_id = c.method + "/seed" + std::to_string(c.seed);
    if (!c.ok) {
      summary["failures"].push_back({{"run_id", run_id}, {"error", c.error}, {"exit_code", c.exit_code}});
      continue;
    }
    for (const auto& [name, acc] : c.accuracy) rows.push_back({run_id, c.seed, "accuracy", name, acc});
  }
  std::error_code ec;
  fs::remove(args.out / "metrics.csv", ec);
  append_metrics_csv(args.out / "metrics.csv", rows);

  std::ofstream table(args.out / "summary.csv", std::ios::trunc);
  table << "method,dataset,mean,std,n\n";
  log << "\nmethod    dataset     mean +- std (n)\n";
  for (const auto& m : methods) {
    const auto it = result.summary.find(m.name);
    if (it == result.summary.end()) continue;
    for (const auto& [name, ms] : it->second) {
      summary["summary"][m.name][name] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
      table << m.name << ',' << name << ',' << ms.mean << ',' << ms.std << ',' << ms.n << '\n';
      log << std::left << std::setw(10) << m.name << std::setw(12) << name << std::fixed << std::setprecision(4)
          << ms.mean << " +- " << ms.std << " (" << ms.n << ")\n"
          << std::defaultfloat;
    }
  }
  summary["runs"] = result.cells.size();
  summary["failed"] = std::count_if(result.cells.begin(), result.cells.end(), [](const CompareCell& c) { return !c.ok; });
  write_json(args.out / "summary.json", summary);
  for (const auto& c : result.cells) {
    if (!c.ok) return c.exit_code == 0 ? 1 : c.exit_code;
  }
  return 0;
}

int cmd_bench_windows(const BenchArgs& args, std::ostream& log) {
  std::vector<BenchMode> modes;
  if (args.mode == "online" || args.mode == "both") modes.push_back(BenchMode::online);
  if (args.mode == "offline" || args.mode == "both") modes.push_back(BenchMode::offline);
  if (modes.empty()) throw ConfigError("--mode must be online, offline or both");
  BenchOptions opt;
  opt.steps = args.steps;
  opt.repeats = args.repeats;
  opt.batch = args.batch;
  opt.seed = args.seed;
  json report;
  report["steps"] = args.steps;
  report["repeats"] = args.repeats;
  report["batch"] = args.batch;
  report["seed"] = args.seed;
  std::vector<BenchResult> results;
  if (modes.size() == 2) {
    auto [online, offline] = bench_windows_paired(opt);
    results = {std::move(online), std::move(offline)};
    report["timing"] = "paired";
  } else {
    results.push_back(bench_windows(modes.front(), opt));
    report["timing"] = "single";
  }
  for (const auto& r : results) {
    const std::string name = r.mode == BenchMode::online ? "online" : "offline";
    report[name] = {{"median_epoch_ms", r.median_ms}, {"epoch_ms", r.epoch_ms}};
    log << std::left << std::setw(8) << name << " median epoch " << r.median_ms << " ms over " << r.epoch_ms.size()
        << " repeats\n";
  }
  if (modes.size() == 2) {
    report["offline_faster"] = report["offline"]["median_epoch_ms"].get<double>() <
                               report["online"]["median_epoch_ms"].get<double>();
  }
  if (!args.out.empty()) write_json(args.out, report);
  return 0;
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int run_main(int argc, char** argv) {
  CLI::App app{"Window Normalization laboratory"};
  app.require_subcommand(1);

  GenDataArgs gen;
  std::string gen_sites = "A,B,C,D,E";
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the multi-site shape benchmark");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Master seed");
  gen_cmd->add_option("--sites", gen_sites, "Comma-separated site list");
  gen_cmd->add_option("--n-per-class", gen.n_per_class, "Samples per class and site (80/20 train/test)");
  gen_cmd->add_flag("--binary", gen.binary, "Two classes (disk vs square)");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one model from a JSON config");
  train_cmd->add_option("--config", train_args.config, "Run config JSON")->required();
  train_cmd->add_option("--override", train_args.overrides, "KEY=VALUE overrides")->expected(0, -1);

  EvalArgs eval_args;
  std::string eval_splits;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset directory")->required();
  eval_cmd->add_option("--splits", eval_splits, "Comma-separated splits: IND, a site (its test split) or SITE/split");
  eval_cmd->add_flag("--corruptions", eval_args.corruptions, "Also evaluate the corruption grid on IND");
  eval_cmd->add_option("--out", eval_args.out, "Output directory (default <checkpoint>/eval)");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Run a method x seed grid and summarize");
  cmp_cmd->add_option("--matrix", cmp.matrix, "Matrix JSON with base config and methods")->required();
  cmp_cmd->add_option("--seeds", cmp.seeds, "Seeds per method");
  cmp_cmd->add_option("--out", cmp.out, "Output directory");
  cmp_cmd->add_option("--jobs", cmp.jobs, "Concurrent grid cells");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench-windows", "Time window generation and statistics per epoch");
  bench_cmd->add_option("--mode", bench.mode, "online, offline or both");
  bench_cmd->add_option("--steps", bench.steps, "Steps per simulated epoch");
  bench_cmd->add_option("--repeats", bench.repeats, "Timed epochs per mode");
  bench_cmd->add_option("--batch", bench.batch, "Feature batch size");
  bench_cmd->add_option("--seed", bench.seed, "Seed for windows and features");
  bench_cmd->add_option("--out", bench.out, "Write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorClass::usage);
  }

  try {
    if (*gen_cmd) {
      gen.sites = split_list(gen_sites);
      return cmd_gen_data(gen, std::cout);
    }
    if (*train_cmd) return cmd_train(train_args, std::cout);
    if (*eval_cmd) {
      eval_args.splits = split_list(eval_splits);
      return cmd_eval(eval_args, std::cout);
    }
    if (*cmp_cmd) return cmd_compare(cmp, std::cout);
    if (*bench_cmd) return cmd_bench_windows(bench, std::cout);
  } catch (const NumericalAbort& e) {
    std::cerr << "error: " << e.what() << "\ndiagnostics: " << e.diagnostics() << "\n";
    return static_cast<int>(ErrorClass::numerical);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.error_class());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorClass::integrity);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorClass::usage);
  }
  return static_cast<int>(ErrorClass::usage);
}

}  // namespace winnorm::cli
