#include "winnorm/checkpoint.hpp"

#include <fstream>

#include "winnorm/config.hpp"
#include "winnorm/dataset_io.hpp"
#include "winnorm/error.hpp"
#include "winnorm/wt4.hpp"

namespace winnorm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct NamedTensor {
  std::string name;
  Tensor4<float>* tensor;
};

std::vector<NamedTensor> named_parameters(const Model<float>& model) {
  std::vector<NamedTensor> out;
  const auto params = model.parameters();
  const auto names = model.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({names[i], &params[i]->value});
  return out;
}

Tensor4<float> running_tensor(const std::vector<double>& v) {
  Tensor4<float> t = Tensor4<float>::matrix(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Model<float>& model, const json& config, std::size_t epoch,
                     const json& metrics) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IntegrityError("cannot create " + dir.string() + ": " + ec.message());
  json manifest;
  manifest["format"] = "winnorm-checkpoint/1";
  manifest["epoch"] = epoch;
  manifest["spec"] = to_json(model.spec());
  manifest["spec_norm"] = to_json(model.spec().norm);
  manifest["config"] = config;
  manifest["metrics"] = metrics;
  manifest["tensors"] = json::array();
  auto put = [&](const std::string& name, const Tensor4<float>& t) {
    const fs::path file = dir / (name + ".wt4");
    save_wt4(file, t);
    manifest["tensors"].push_back({{"name", name}, {"file", file.filename().string()}, {"fnv1a", file_checksum(file)}});
  };
  for (const auto& p : named_parameters(model)) put(p.name, *p.tensor);
  for (const auto& n : model.norm_layers()) {
    if (n.config().kind != NormKind::bn) continue;
    const std::string stem = "norm" + std::to_string(n.layer_id());
    put(stem + ".running_mean", running_tensor(n.running().running_mean));
    put(stem + ".running_var", running_tensor(n.running().running_var));
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw IntegrityError("failed writing checkpoint manifest in " + dir.string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IntegrityError("checkpoint manifest missing in " + dir.string());
  const json manifest = json::parse(in, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) throw IntegrityError("malformed checkpoint manifest");
  try {
    if (manifest.at("format").get<std::string>() != "winnorm-checkpoint/1") {
      throw IntegrityError("unsupported checkpoint format");
    }
    Checkpoint ck{Model<float>(cnn_spec_from_json(manifest.at("spec"), manifest.at("spec_norm"))),
                  manifest.at("config"), manifest.at("metrics"), manifest.at("epoch").get<std::size_t>()};
    std::map<std::string, Tensor4<float>> files;
    for (const auto& t : manifest.at("tensors")) {
      const fs::path file = dir / t.at("file").get<std::string>();
      if (!fs::exists(file)) throw IntegrityError("checkpoint tensor missing: " + file.string());
      if (file_checksum(file) != t.at("fnv1a").get<std::string>()) {
        throw IntegrityError("checksum mismatch for " + file.string());
      }
      files[t.at("name").get<std::string>()] = load_wt4(file);
    }
    auto take = [&](const std::string& name, const Dims& want) -> Tensor4<float> {
      auto it = files.find(name);
      if (it == files.end()) throw IntegrityError("checkpoint lacks tensor " + name);
      if (!(it->second.dims() == want)) {
        throw IntegrityError("checkpoint tensor " + name + " has dims " + it->second.dims().str() + ", model expects " +
                             want.str());
      }
      return it->second;
    };
    for (const auto& p : named_parameters(ck.model)) *p.tensor = take(p.name, p.tensor->dims());
    for (auto& n : ck.model.norm_layers()) {
      if (n.config().kind != NormKind::bn) continue;
      const std::string stem = "norm" + std::to_string(n.layer_id());
      const Dims d{1, n.channels(), 1, 1};
      const Tensor4<float> m = take(stem + ".running_mean", d);
      const Tensor4<float> v = take(stem + ".running_var", d);
      n.running().running_mean.assign(m.data().begin(), m.data().end());
      n.running().running_var.assign(v.data().begin(), v.data().end());
    }
    return ck;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

}  // namespace winnorm
