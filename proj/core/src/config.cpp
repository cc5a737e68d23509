#include "winnorm/config.hpp"

#include <fstream>

#include "winnorm/error.hpp"

namespace winnorm {

using nlohmann::json;

json to_json(const NormConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"strategy", std::string(to_string(c.strategy))},
          {"tau", c.tau},
          {"alpha", c.alpha},
          {"eps", c.eps},
          {"stat_subset", std::string(to_string(c.stat_subset))},
          {"mixing", c.mixing},
          {"affine", c.affine ? json(*c.affine) : json(nullptr)},
          {"speckle_magnitude", c.speckle_magnitude},
          {"momentum", c.momentum},
          {"block_input", {c.block_input.h, c.block_input.w}},
          {"block_patch", {c.block_patch.h, c.block_patch.w}},
          {"share_window_across_layers", c.share_window_across_layers}};
}

json to_json(const CnnSpec& spec) {
  json stages = json::array();
  for (const auto& s : spec.stages) {
    json st = {{"channels", s.channels}, {"downsample", s.downsample}};
    if (s.norm) st["norm"] = to_json(*s.norm);
    stages.push_back(st);
  }
  return {{"in_channels", spec.in_channels},
          {"input", {spec.input.h, spec.input.w}},
          {"stages", stages},
          {"convs_per_stage", spec.convs_per_stage},
          {"num_classes", spec.num_classes},
          {"init_seed", spec.init_seed}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"delta", c.delta},
          {"seed", c.seed},
          {"trainer", std::string(to_string(c.trainer))},
          {"stop_grad_second_pass", c.stop_grad_second_pass},
          {"augment", c.augment},
          {"offline_windows", c.offline_windows},
          {"eval_every", c.eval_every},
          {"eval_batch_size", c.eval_batch_size}};
}

json to_json(const RunConfig& c) {
  return {{"data", {{"dir", c.data.dir}, {"train_sites", c.data.train_sites}, {"ood_sites", c.data.ood_sites}}},
          {"model", to_json(c.model)},
          {"norm", to_json(c.model.norm)},
          {"train", to_json(c.train)},
          {"out", c.out}};
}

void strict_merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      strict_merge(slot, value, here);
    } else {
      slot = value;
    }
  }
}

namespace {

PlaneDims plane_from(const json& j, const char* what) {
  const auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 2) throw ConfigError(std::string(what) + " must be [h, w]");
  return {v[0], v[1]};
}

template <typename F>
auto guarded(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError("invalid value in " + where + ": " + e.what());
  }
}

}  // namespace

NormConfig norm_config_from_json(const json& j, const NormConfig& base) {
  json full = to_json(base);
  strict_merge(full, j, "norm");
  return guarded("norm", [&] {
    NormConfig c;
    c.kind = parse_norm_kind(full.at("kind").get<std::string>());
    c.strategy = parse_strategy(full.at("strategy").get<std::string>());
    c.tau = full.at("tau").get<double>();
    c.alpha = full.at("alpha").get<double>();
    c.eps = full.at("eps").get<double>();
    c.stat_subset = parse_stat_subset(full.at("stat_subset").get<std::string>());
    c.mixing = full.at("mixing").get<bool>();
    if (!full.at("affine").is_null()) c.affine = full.at("affine").get<bool>();
    c.speckle_magnitude = full.at("speckle_magnitude").get<double>();
    c.momentum = full.at("momentum").get<double>();
    c.block_input = plane_from(full.at("block_input"), "norm.block_input");
    c.block_patch = plane_from(full.at("block_patch"), "norm.block_patch");
    c.share_window_across_layers = full.at("share_window_across_layers").get<bool>();
    c.validate();
    return c;
  });
}

CnnSpec cnn_spec_from_json(const json& model, const json& norm) {
  CnnSpec defaults;
  json full = to_json(defaults);
  strict_merge(full, model, "model");
  return guarded("model", [&] {
    CnnSpec s;
    s.norm = norm_config_from_json(norm);
    s.in_channels = full.at("in_channels").get<std::size_t>();
    s.input = plane_from(full.at("input"), "model.input");
    s.stages.clear();
    const StageSpec stage_defaults;
    for (const auto& st : full.at("stages")) {
      json sfull = {{"channels", stage_defaults.channels}, {"downsample", stage_defaults.downsample}};
      json own = st;
      if (own.is_object()) own.erase("norm");
      strict_merge(sfull, own, "model.stages[]");
      StageSpec out{sfull.at("channels").get<std::size_t>(), sfull.at("downsample").get<bool>(), std::nullopt};
      if (st.contains("norm")) out.norm = norm_config_from_json(st.at("norm"), s.norm);
      s.stages.push_back(out);
    }
    s.convs_per_stage = full.at("convs_per_stage").get<std::size_t>();
    s.num_classes = full.at("num_classes").get<std::size_t>();
    s.init_seed = full.at("init_seed").get<std::uint64_t>();
    return s;
  });
}

TrainConfig train_config_from_json(const json& j) {
  json full = to_json(TrainConfig{});
  strict_merge(full, j, "train");
  return guarded("train", [&] {
    TrainConfig c;
    c.epochs = full.at("epochs").get<std::size_t>();
    c.batch_size = full.at("batch_size").get<std::size_t>();
    c.base_lr = full.at("base_lr").get<double>();
    c.warmup_epochs = full.at("warmup_epochs").get<std::size_t>();
    c.momentum = full.at("momentum").get<double>();
    c.weight_decay = full.at("weight_decay").get<double>();
    c.delta = full.at("delta").get<double>();
    c.seed = full.at("seed").get<std::uint64_t>();
    c.trainer = parse_trainer_kind(full.at("trainer").get<std::string>());
    c.stop_grad_second_pass = full.at("stop_grad_second_pass").get<bool>();
    c.augment = full.at("augment").get<bool>();
    c.offline_windows = full.at("offline_windows").get<bool>();
    c.eval_every = full.at("eval_every").get<std::size_t>();
    c.eval_batch_size = full.at("eval_batch_size").get<std::size_t>();
    c.validate();
    return c;
  });
}

RunConfig run_config_from_json(const json& doc) {
  json full = to_json(RunConfig{});
  strict_merge(full, doc);
  return guarded("config", [&] {
    RunConfig c;
    c.data.dir = full.at("data").at("dir").get<std::string>();
    c.data.train_sites = full.at("data").at("train_sites").get<std::vector<std::string>>();
    c.data.ood_sites = full.at("data").at("ood_sites").get<std::vector<std::string>>();
    if (c.data.train_sites.empty()) throw ConfigError("data.train_sites must name at least one site");
    c.model = cnn_spec_from_json(full.at("model"), full.at("norm"));
    c.train = train_config_from_json(full.at("train"));
    c.out = full.at("out").get<std::string>();
    return c;
  });
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  const json defaults = to_json(RunConfig{});
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not KEY=VALUE");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json patch = value;
    std::vector<std::string> parts;
    for (std::size_t start = 0;;) {
      const auto dot = key.find('.', start);
      parts.push_back(key.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    json merged = defaults;
    strict_merge(merged, doc);
    strict_merge(merged, patch);
    doc = merged;
  }
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config " + file.string() + " is not valid JSON");
  apply_overrides(doc, overrides);
  return run_config_from_json(doc);
}

TrainData make_train_data(const Dataset& dataset, const DataConfig& data) {
  TrainData td;
  std::vector<const LabeledImages*> train, val;
  for (const auto& site : data.train_sites) {
    train.push_back(&dataset.find(site, "train").data);
    val.push_back(&dataset.find(site, "test").data);
  }
  td.train = LabeledImages::concat(train);
  td.val = {"IND", LabeledImages::concat(val)};
  for (const auto& site : data.ood_sites) td.ood.push_back({site, dataset.find(site, "test").data});
  return td;
}

}  // namespace winnorm
