#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "support/scratch_dir.hpp"
#include "winnorm/checkpoint.hpp"
#include "winnorm/config.hpp"
#include "winnorm/corruption.hpp"
#include "winnorm/data_synth.hpp"
#include "winnorm/dataset_io.hpp"
#include "winnorm/error.hpp"

namespace winnorm {
namespace {

namespace fs = std::filesystem;
using testing::ScratchDir;

TEST(SiteGeneration, SharedStreamGivesSameLabelsAndGeometry) {
  const Rng rng(7, Stream::data);
  const auto a = gen_site_dataset(rng, site_style("A"), 10);
  const auto b = gen_site_dataset(rng, site_style("B"), 10);
  ASSERT_EQ(a.size(), 40u);
  ASSERT_EQ(a.size(), b.size());
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].geometry, b[i].geometry);
    differing += a[i].image != b[i].image;
  }
  EXPECT_EQ(differing, a.size());
}

TEST(SiteGeneration, ClassHistogramIsUniformAndPixelsInRange) {
  const auto s = gen_site_dataset(Rng(1, Stream::data), site_style("E"), 13);
  std::vector<int> hist(kShapeClasses, 0);
  for (const auto& x : s) {
    ++hist[static_cast<std::size_t>(x.label)];
    ASSERT_EQ(x.image.size(), kImageSize);
    for (float v : x.image) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
  for (int h : hist) EXPECT_EQ(h, 13);
  const auto binary = gen_site_dataset(Rng(1, Stream::data), site_style("A"), 3, 2);
  EXPECT_EQ(binary.size(), 6u);
  EXPECT_THROW(gen_site_dataset(Rng(1), site_style("A"), 0), ConfigError);
  EXPECT_THROW(site_style("F"), ConfigError);
}

TEST(SiteGeneration, RasterizedShapesHaveDistinctCoverage) {
  const Geometry g{16, 16, 8, 0};
  double area[kShapeClasses];
  for (std::size_t k = 0; k < kShapeClasses; ++k) {
    const auto cov = rasterize(static_cast<ShapeClass>(k), g);
    area[k] = 0;
    for (double c : cov) {
      ASSERT_GE(c, 0.0);
      ASSERT_LE(c, 1.0);
      area[k] += c;
    }
    EXPECT_GT(area[k], 20.0);
  }
  // A disk of radius r is smaller than the square circumscribing it.
  EXPECT_LT(area[static_cast<int>(ShapeClass::disk)], area[static_cast<int>(ShapeClass::square)]);
}

// Nearest-centroid classifier in raw pixel space, fit on one split.
struct NearestCentroid {
  std::vector<std::vector<double>> centroids;

  explicit NearestCentroid(const LabeledImages& d, std::size_t classes)
      : centroids(classes, std::vector<double>(kImageSize, 0.0)) {
    std::vector<double> counts(classes, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto k = static_cast<std::size_t>(d.labels[i]);
      counts[k] += 1;
      for (std::size_t p = 0; p < kImageSize; ++p) centroids[k][p] += d.images.data()[i * kImageSize + p];
    }
    for (std::size_t k = 0; k < classes; ++k)
      for (double& v : centroids[k]) v /= counts[k];
  }

  double accuracy(const LabeledImages& d) const {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::size_t best = 0;
      double best_dist = INFINITY;
      for (std::size_t k = 0; k < centroids.size(); ++k) {
        double dist = 0;
        for (std::size_t p = 0; p < kImageSize; ++p) {
          const double e = d.images.data()[i * kImageSize + p] - centroids[k][p];
          dist += e * e;
        }
        if (dist < best_dist) best_dist = dist, best = k;
      }
      hits += static_cast<int>(best) == d.labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(d.size());
  }
};

TEST(SiteGeneration, NearestCentroidSuffersFromSiteShift) {
  GenerateOptions opt;
  opt.seed = 3;
  opt.n_per_class = 100;
  const auto ds = generate_dataset(opt);
  const NearestCentroid nc(ds.find("A", "train").data, kShapeClasses);
  const double ind = nc.accuracy(ds.find("A", "test").data);
  for (const char* site : {"B", "C", "D", "E"}) {
    EXPECT_LT(nc.accuracy(ds.find(site, "test").data), ind) << site;
  }
}

TEST(Dataset, LabelsAreSiteInvariantAndSplitsAreSized) {
  GenerateOptions opt;
  opt.n_per_class = 10;
  const auto ds = generate_dataset(opt);
  EXPECT_EQ(ds.sites(), (std::vector<std::string>{"A", "B", "C", "D", "E"}));
  EXPECT_EQ(ds.find("A", "train").data.size(), 32u);
  EXPECT_EQ(ds.find("A", "test").data.size(), 8u);
  for (const char* site : {"B", "C", "D", "E"}) {
    EXPECT_EQ(ds.find(site, "test").data.labels, ds.find("A", "test").data.labels);
  }
  EXPECT_FALSE(ds.has("A", "val"));
  EXPECT_THROW(ds.find("Z", "test"), std::exception);
}

TEST(Dataset, GenerationIsDeterministicFromTheMasterSeed) {
  GenerateOptions opt;
  opt.n_per_class = 5;
  opt.sites = {"A", "C"};
  const auto a = generate_dataset(opt), b = generate_dataset(opt);
  ASSERT_EQ(a.splits.size(), b.splits.size());
  for (std::size_t i = 0; i < a.splits.size(); ++i) EXPECT_EQ(a.splits[i].data.images, b.splits[i].data.images);
  opt.seed = 1;
  EXPECT_NE(generate_dataset(opt).splits[0].data.images, a.splits[0].data.images);
}

TEST(DatasetIo, RoundTripIsBitExact) {
  GenerateOptions opt;
  opt.n_per_class = 25;  // 100 samples per site
  opt.sites = {"A", "D"};
  opt.binary = false;
  const auto ds = generate_dataset(opt);
  ScratchDir dir("dataset");
  write_dataset(dir.path(), ds);
  const auto back = read_dataset(dir.path());
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.num_classes, ds.num_classes);
  EXPECT_EQ(back.styles, ds.styles);
  EXPECT_EQ(back.corruptions, ds.corruptions);
  ASSERT_EQ(back.splits.size(), ds.splits.size());
  for (std::size_t i = 0; i < ds.splits.size(); ++i) {
    EXPECT_EQ(back.splits[i].site, ds.splits[i].site);
    EXPECT_EQ(back.splits[i].split, ds.splits[i].split);
    EXPECT_EQ(back.splits[i].data.labels, ds.splits[i].data.labels);
    const auto x = back.splits[i].data.images.data(), y = ds.splits[i].data.images.data();
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(0, std::memcmp(x.data(), y.data(), y.size_bytes()));
  }
}

TEST(DatasetIo, DiskSizeMatchesTheTensorPayload) {
  GenerateOptions opt;
  opt.n_per_class = 25;
  const auto ds = generate_dataset(opt);
  ScratchDir dir("size");
  write_dataset(dir.path(), ds);
  std::uintmax_t total = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) total += fs::file_size(e.path());
  const double expected = 5.0 * 100 * kImageSize * 4 + static_cast<double>(fs::file_size(dir / "manifest.json"));
  EXPECT_LT(std::abs(static_cast<double>(total) - expected) / expected, 0.01);
}

TEST(DatasetIo, MissingOrTamperedFilesRaiseIntegrityErrors) {
  GenerateOptions opt;
  opt.n_per_class = 2;
  opt.sites = {"A"};
  const auto ds = generate_dataset(opt);
  {
    ScratchDir dir("missing");
    write_dataset(dir.path(), ds);
    fs::remove(dir / "A_test.wt4");
    EXPECT_THROW(read_dataset(dir.path()), IntegrityError);
  }
  {
    ScratchDir dir("tampered");
    write_dataset(dir.path(), ds);
    std::fstream f(dir / "A_train.wt4", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x7f');
    f.close();
    EXPECT_THROW(read_dataset(dir.path()), IntegrityError);
  }
  {
    ScratchDir dir("malformed");
    write_dataset(dir.path(), ds);
    std::ofstream(dir / "manifest.json") << "{\"format\": ";
    EXPECT_THROW(read_dataset(dir.path()), IntegrityError);
  }
  EXPECT_THROW(read_dataset("/nonexistent/winnorm"), IntegrityError);
}

std::vector<float> sample_image(std::uint64_t seed = 2) {
  return gen_site_dataset(Rng(seed, Stream::data), site_style("A"), 1)[0].image;
}

TEST(Corruption, NeutralParametersAreIdentity) {
  const auto img = sample_image();
  Rng rng(1);
  EXPECT_EQ(apply_corruption(img, 3, 32, CorruptionKind::contrast, 1.0, rng), img);
  EXPECT_EQ(apply_corruption(img, 3, 32, CorruptionKind::box_blur, 1.0, rng), img);
  EXPECT_EQ(apply_corruption(img, 3, 32, CorruptionKind::pixelate, 1.0, rng), img);
  EXPECT_EQ(apply_corruption(img, 3, 32, CorruptionKind::brightness, 0.0, rng), img);
  EXPECT_EQ(apply_corruption(img, 3, 32, CorruptionKind::gaussian_noise, 0.0, rng), img);
}

TEST(Corruption, DefaultTableAndParsing) {
  const auto t = CorruptionTable::defaults();
  for (int s = 1; s <= 5; ++s) EXPECT_DOUBLE_EQ(t.parameter({CorruptionKind::gaussian_noise, s}), 0.04 * s);
  EXPECT_THROW(t.parameter({CorruptionKind::contrast, 0}), ConfigError);
  EXPECT_THROW(t.parameter({CorruptionKind::contrast, 6}), ConfigError);
  EXPECT_EQ(CorruptionTable::from_json(t.to_json()), t);
  EXPECT_THROW(CorruptionTable::from_json("{\"contrast\": [1, 2]}"), IntegrityError);
  for (auto k : kCorruptionKinds) EXPECT_EQ(parse_corruption_kind(to_string(k)), k);
  EXPECT_THROW(parse_corruption_kind("fog"), ConfigError);
  Rng rng(1);
  EXPECT_THROW(apply_corruption(sample_image(), 3, 32, CorruptionKind::box_blur, 2.5, rng), ConfigError);
}

TEST(Corruption, DistortionEnergyGrowsWithSeverity) {
  std::vector<std::vector<float>> images;
  for (std::uint64_t s = 0; s < 8; ++s) images.push_back(sample_image(s));
  for (auto kind : kCorruptionKinds) {
    double previous = 0.0;
    for (int sev = 1; sev <= kSeverities; ++sev) {
      double energy = 0.0;
      for (std::size_t i = 0; i < images.size(); ++i) {
        Rng rng(i, Stream::corruption);
        const auto out = corrupt(images[i], 3, 32, {kind, sev}, rng);
        for (std::size_t p = 0; p < out.size(); ++p) {
          ASSERT_GE(out[p], 0.0f);
          ASSERT_LE(out[p], 1.0f);
          energy += std::pow(out[p] - images[i][p], 2);
        }
      }
      EXPECT_GT(energy, previous) << to_string(kind) << " severity " << sev;
      previous = energy;
    }
  }
}

TEST(Corruption, DeterministicGivenSeed) {
  const auto img = sample_image();
  Rng a(9, Stream::corruption), b(9, Stream::corruption), c(10, Stream::corruption);
  const auto x = corrupt(img, 3, 32, {CorruptionKind::gaussian_noise, 3}, a);
  EXPECT_EQ(x, corrupt(img, 3, 32, {CorruptionKind::gaussian_noise, 3}, b));
  EXPECT_NE(x, corrupt(img, 3, 32, {CorruptionKind::gaussian_noise, 3}, c));
}

TEST(Config, OverridesLayerOverDefaults) {
  auto doc = to_json(RunConfig{});
  apply_overrides(doc, {"norm.kind=WIN", "norm.tau=0.7", "train.epochs=3", "data.train_sites=[\"A\",\"B\"]"});
  const auto cfg = run_config_from_json(doc);
  EXPECT_EQ(cfg.model.norm.kind, NormKind::win);
  EXPECT_DOUBLE_EQ(cfg.model.norm.tau, 0.7);
  EXPECT_EQ(cfg.train.epochs, 3u);
  EXPECT_EQ(cfg.data.train_sites, (std::vector<std::string>{"A", "B"}));
  // Round trip through JSON is stable.
  EXPECT_EQ(to_json(run_config_from_json(to_json(cfg))), to_json(cfg));
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  auto doc = to_json(RunConfig{});
  EXPECT_THROW(apply_overrides(doc, {"norm.tua=0.7"}), ConfigError);
  EXPECT_THROW(apply_overrides(doc, {"novalue"}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"train", {{"epochs", 1}, {"bogus", 2}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"norm", {{"kind", "GN"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"norm", {{"tau", 1.5}}}}), ConfigError);
  const auto partial = run_config_from_json(nlohmann::json{{"train", {{"epochs", 2}}}});
  EXPECT_EQ(partial.train.epochs, 2u);
  EXPECT_EQ(partial.train.batch_size, TrainConfig{}.batch_size);
}

TEST(Config, TrainDataMergesTrainSitesAndListsOodSites) {
  GenerateOptions opt;
  opt.n_per_class = 5;
  const auto ds = generate_dataset(opt);
  DataConfig dc;
  dc.train_sites = {"A", "B"};
  dc.ood_sites = {"C", "E"};
  const auto td = make_train_data(ds, dc);
  EXPECT_EQ(td.train.size(), 32u);
  EXPECT_EQ(td.val.name, "IND");
  EXPECT_EQ(td.val.data.size(), 8u);
  ASSERT_EQ(td.ood.size(), 2u);
  EXPECT_EQ(td.ood[0].name, "C");
  EXPECT_EQ(td.ood[1].name, "E");
}

TEST(Checkpoint, RoundTripRestoresEveryTensor) {
  CnnSpec spec;
  spec.input = {8, 8};
  spec.stages = {{4, false, std::nullopt}, {6, true, std::nullopt}};
  spec.norm.kind = NormKind::bn;
  Model<float> model(spec);
  for (auto& l : model.norm_layers()) {
    auto& rm = l.running().running_mean;
    std::fill(rm.begin(), rm.end(), 0.25);
  }
  ScratchDir dir("ckpt");
  save_checkpoint(dir.path(), model, nlohmann::json{{"k", 1}}, 4, nlohmann::json{{"acc", 0.5}});
  const auto ck = load_checkpoint(dir.path());
  EXPECT_EQ(ck.epoch, 4u);
  EXPECT_EQ(ck.config.at("k"), 1);
  EXPECT_EQ(ck.metrics.at("acc"), 0.5);
  const auto a = model.parameters(), b = ck.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
  EXPECT_EQ(ck.model.norm_layers()[1].running().running_mean, model.norm_layers()[1].running().running_mean);
  fs::remove(dir / "conv1.weight.wt4");
  EXPECT_THROW(load_checkpoint(dir.path()), IntegrityError);
}

}  // namespace
}  // namespace winnorm
