#include "winnorm/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "winnorm/error.hpp"
#include "winnorm/wt4.hpp"

namespace winnorm {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::span<const std::byte> bytes) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::byte b : bytes) h = (h ^ static_cast<std::uint64_t>(b)) * 1099511628211ULL;
  return h;
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot read " + path.string());
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::uint64_t h = fnv1a64(std::as_bytes(std::span<const char>(content)));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const SiteSplit& Dataset::find(const std::string& site, const std::string& split) const {
  for (const auto& s : splits) {
    if (s.site == site && s.split == split) return s;
  }
  throw ConfigError("dataset has no split " + site + "/" + split);
}

bool Dataset::has(const std::string& site, const std::string& split) const {
  for (const auto& s : splits) {
    if (s.site == site && s.split == split) return true;
  }
  return false;
}

std::vector<std::string> Dataset::sites() const {
  std::vector<std::string> out;
  for (const auto& s : styles) out.push_back(s.name);
  return out;
}

Dataset generate_dataset(const GenerateOptions& opt) {
  if (opt.sites.empty()) throw ConfigError("at least one site is required");
  if (!(opt.train_fraction > 0.0 && opt.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  Dataset ds;
  ds.seed = opt.seed;
  ds.num_classes = opt.binary ? 2 : kShapeClasses;
  const std::vector<SiteStyle> all = default_sites();
  const Rng master(opt.seed, Stream::data);
  for (const auto& name : opt.sites) {
    const SiteStyle& style = site_style(name);
    const auto index = static_cast<std::uint64_t>(&style - &site_style("A"));
    ds.styles.push_back(style);
    const auto samples = gen_site_dataset(master.fork(index), style, opt.n_per_class, ds.num_classes);
    const auto n_train = static_cast<std::size_t>(std::floor(opt.train_fraction * static_cast<double>(samples.size())));
    if (n_train == 0 || n_train == samples.size()) throw ConfigError("n_per_class too small to form both splits");
    for (int part = 0; part < 2; ++part) {
      const std::vector<ShapeSample> slice(samples.begin() + (part == 0 ? 0 : static_cast<std::ptrdiff_t>(n_train)),
                                           part == 0 ? samples.begin() + static_cast<std::ptrdiff_t>(n_train)
                                                     : samples.end());
      SiteSplit s{name, part == 0 ? "train" : "test", pack(slice), {}};
      for (const auto& x : slice) s.geometry.push_back(x.geometry);
      ds.splits.push_back(std::move(s));
    }
  }
  return ds;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

json style_json(const SiteStyle& s) {
  return {{"name", s.name},
          {"background", s.background},
          {"texture_amplitude", s.texture_amplitude},
          {"texture_frequency", s.texture_frequency},
          {"foreground_lo", s.foreground_lo},
          {"foreground_hi", s.foreground_hi},
          {"contrast", s.contrast},
          {"noise_sigma", s.noise_sigma},
          {"channel_mix", s.channel_mix}};
}

SiteStyle style_from_json(const json& j) {
  SiteStyle s;
  s.name = j.at("name").get<std::string>();
  s.background = j.at("background").get<double>();
  s.texture_amplitude = j.at("texture_amplitude").get<double>();
  s.texture_frequency = j.at("texture_frequency").get<double>();
  s.foreground_lo = j.at("foreground_lo").get<double>();
  s.foreground_hi = j.at("foreground_hi").get<double>();
  s.contrast = j.at("contrast").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.channel_mix = j.at("channel_mix").get<std::array<double, 9>>();
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError("cannot write " + path.string());
  out << text;
  if (!out) throw IntegrityError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("missing file " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

double parse_double(const std::string& field, const fs::path& where) {
  double v = 0.0;
  const auto r = std::from_chars(field.data(), field.data() + field.size(), v);
  if (r.ec != std::errc() || r.ptr != field.data() + field.size()) {
    throw IntegrityError("bad number '" + field + "' in " + where.string());
  }
  return v;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IntegrityError("cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "shapesites/1";
  manifest["seed"] = ds.seed;
  manifest["num_classes"] = ds.num_classes;
  json classes = json::array();
  for (std::size_t k = 0; k < ds.num_classes; ++k) classes.push_back(std::string(to_string(static_cast<ShapeClass>(k))));
  manifest["classes"] = classes;
  manifest["image"] = {kImageChannels, kImageSide, kImageSide};
  manifest["sites"] = json::array();
  for (const auto& s : ds.styles) manifest["sites"].push_back(style_json(s));
  manifest["splits"] = json::array();

  for (const auto& s : ds.splits) {
    const std::string stem = s.site + "_" + s.split;
    const fs::path tensor = dir / (stem + ".wt4");
    const fs::path labels = dir / (stem + "_labels.csv");
    save_wt4(tensor, s.data.images);
    std::ostringstream csv;
    csv << "index,label,site,cx,cy,scale,rotation\n";
    for (std::size_t i = 0; i < s.data.size(); ++i) {
      const Geometry& g = s.geometry.at(i);
      csv << i << ',' << s.data.labels[i] << ',' << s.site << ',' << shortest(g.cx) << ',' << shortest(g.cy) << ','
          << shortest(g.scale) << ',' << shortest(g.rotation) << '\n';
    }
    write_text(labels, csv.str());
    manifest["splits"].push_back({{"site", s.site},
                                  {"split", s.split},
                                  {"count", s.data.size()},
                                  {"tensor", tensor.filename().string()},
                                  {"labels", labels.filename().string()},
                                  {"tensor_fnv1a", file_checksum(tensor)},
                                  {"labels_fnv1a", file_checksum(labels)}});
  }
  write_text(dir / "corruptions.json", ds.corruptions.to_json() + "\n");
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IntegrityError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    if (manifest.at("format").get<std::string>() != "shapesites/1") throw IntegrityError("unsupported dataset format");
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.num_classes = manifest.at("num_classes").get<std::size_t>();
    if (ds.num_classes < 2 || ds.num_classes > kShapeClasses) throw IntegrityError("manifest num_classes out of range");
    if (manifest.at("image").get<std::vector<std::size_t>>() != std::vector<std::size_t>{kImageChannels, kImageSide, kImageSide}) {
      throw IntegrityError("manifest image shape must be [3, 32, 32]");
    }
    for (const auto& s : manifest.at("sites")) ds.styles.push_back(style_from_json(s));
    for (const auto& entry : manifest.at("splits")) {
      SiteSplit s;
      s.site = entry.at("site").get<std::string>();
      s.split = entry.at("split").get<std::string>();
      const auto count = entry.at("count").get<std::size_t>();
      const fs::path tensor = dir / entry.at("tensor").get<std::string>();
      const fs::path labels = dir / entry.at("labels").get<std::string>();
      if (!fs::exists(tensor)) throw IntegrityError("manifest lists missing tensor file " + tensor.string());
      if (!fs::exists(labels)) throw IntegrityError("manifest lists missing label file " + labels.string());
      if (file_checksum(tensor) != entry.at("tensor_fnv1a").get<std::string>()) {
        throw IntegrityError("checksum mismatch for " + tensor.string());
      }
      if (file_checksum(labels) != entry.at("labels_fnv1a").get<std::string>()) {
        throw IntegrityError("checksum mismatch for " + labels.string());
      }
      s.data.images = load_wt4(tensor);
      if (!(s.data.images.dims() == Dims{count, kImageChannels, kImageSide, kImageSide})) {
        throw IntegrityError(tensor.string() + " has dims " + s.data.images.dims().str() + ", manifest expects " +
                             std::to_string(count) + " x 3 x 32 x 32");
      }
      std::istringstream csv(read_text(labels));
      std::string line;
      std::getline(csv, line);
      if (line != "index,label,site,cx,cy,scale,rotation") throw IntegrityError("bad header in " + labels.string());
      while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 7) throw IntegrityError("bad row in " + labels.string() + ": " + line);
        const double label = parse_double(f[1], labels);
        if (label < 0 || label >= static_cast<double>(ds.num_classes) || label != std::floor(label)) {
          throw IntegrityError("label out of range in " + labels.string());
        }
        if (parse_double(f[0], labels) != static_cast<double>(s.data.labels.size()) || f[2] != s.site) {
          throw IntegrityError("row out of order in " + labels.string());
        }
        s.data.labels.push_back(static_cast<int>(label));
        s.geometry.push_back({parse_double(f[3], labels), parse_double(f[4], labels), parse_double(f[5], labels),
                              parse_double(f[6], labels)});
      }
      if (s.data.labels.size() != count) throw IntegrityError(labels.string() + " row count differs from manifest");
      ds.splits.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IntegrityError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  const fs::path table = dir / "corruptions.json";
  if (fs::exists(table)) ds.corruptions = CorruptionTable::from_json(read_text(table));
  return ds;
}

}  // namespace winnorm
