#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "geomoe/data.hpp"
#include "helpers.hpp"

using namespace geomoe;
using namespace geomoe::testing;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "geomoe_data_test";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

std::array<std::size_t, 3> split_counts(const DatasetManifest& m, int cls) {
  std::array<std::size_t, 3> c{0, 0, 0};
  for (const auto& r : m.records)
    if (r.class_id == cls) ++c[static_cast<std::size_t>(r.split)];
  return c;
}

}  // namespace

TEST(Synthetic, TwoClassesStratified) {
  SyntheticConfig cfg;
  cfg.num_classes = 2;
  cfg.samples_per_class = 10;
  const auto sd = generate_synthetic(cfg);
  EXPECT_EQ(sd.dataset.size(), 20u);
  for (int k = 0; k < 2; ++k)
    for (auto n : split_counts(sd.dataset.manifest, k)) EXPECT_GE(n, 1u);
}

TEST(Synthetic, ImbalancedClassesStillStratified) {
  SyntheticConfig cfg;
  cfg.num_classes = 30;
  cfg.samples_per_class = 80;
  cfg.imbalanced = true;
  cfg.seed = 4;
  const auto sd = generate_synthetic(cfg);
  std::size_t smallest = 1000000, largest = 0;
  for (int k = 0; k < 30; ++k) {
    const auto c = split_counts(sd.dataset.manifest, k);
    const auto n = c[0] + c[1] + c[2];
    smallest = std::min(smallest, n);
    largest = std::max(largest, n);
    if (n >= 10)
      for (auto x : c) EXPECT_GE(x, 1u) << "class " << k;
  }
  EXPECT_GT(largest, smallest);
  EXPECT_GE(smallest, static_cast<std::size_t>(cfg.min_samples_per_class));
}

TEST(Synthetic, LocationsInsideCaps) {
  SyntheticConfig cfg;
  cfg.num_classes = 20;
  cfg.samples_per_class = 40;
  cfg.seed = 8;
  const auto sd = generate_synthetic(cfg);
  for (const auto& r : sd.dataset.manifest.records) {
    const auto& range = sd.ranges[static_cast<std::size_t>(r.class_id)];
    EXPECT_LE(angular_distance(r.location, range.center), range.radius + 1e-9);
    EXPECT_NO_THROW(r.location.validate());
  }
  for (const auto& range : sd.ranges) {
    EXPECT_GE(range.radius, cfg.radius_min);
    EXPECT_LE(range.radius, cfg.radius_max);
  }
}

TEST(Synthetic, AnchoredClassesClusterAroundAnchor) {
  SyntheticConfig cfg;
  cfg.num_classes = 5;
  cfg.anchors = {{{0, 90}, 3, 0.1}};
  const auto sd = generate_synthetic(cfg);
  for (int k = 0; k < 3; ++k) EXPECT_LE(angular_distance(sd.ranges[static_cast<std::size_t>(k)].center, {0, 90}), 0.1 + 1e-9);
}

TEST(Synthetic, Deterministic) {
  const auto cfg = tiny_data_config(5, 11);
  const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  EXPECT_EQ(a.dataset.manifest.records, b.dataset.manifest.records);
  EXPECT_EQ(a.dataset.manifest.config_hash, b.dataset.manifest.config_hash);
  ASSERT_EQ(a.dataset.images.size(), b.dataset.images.size());
  for (std::size_t i = 0; i < a.dataset.images.size(); ++i) EXPECT_EQ(a.dataset.images[i].vec(), b.dataset.images[i].vec());
  auto other = cfg;
  other.seed = 12;
  EXPECT_NE(generate_synthetic(other).dataset.manifest.records, a.dataset.manifest.records);
}

TEST(Synthetic, NearestCentroidBeatsChanceTwice) {
  SyntheticConfig cfg;
  cfg.num_classes = 20;
  cfg.samples_per_class = 30;
  cfg.seed = 2;
  const auto d = generate_synthetic(cfg).dataset;
  const std::size_t D = d.images[0].size();
  std::vector<std::vector<double>> cent(20, std::vector<double>(D, 0));
  std::vector<double> n(20, 0);
  for (auto i : d.indices(Split::train)) {
    const auto k = static_cast<std::size_t>(d.record(i).class_id);
    for (std::size_t q = 0; q < D; ++q) cent[k][q] += d.images[i][q];
    n[k] += 1;
  }
  for (std::size_t k = 0; k < 20; ++k)
    for (auto& v : cent[k]) v /= n[k];
  std::size_t hit = 0;
  const auto test = d.indices(Split::test);
  for (auto i : test) {
    double best = 1e300;
    int arg = -1;
    for (std::size_t k = 0; k < 20; ++k) {
      double s = 0;
      for (std::size_t q = 0; q < D; ++q) s += std::pow(d.images[i][q] - cent[k][q], 2);
      if (s < best) {
        best = s;
        arg = static_cast<int>(k);
      }
    }
    hit += arg == d.record(i).class_id;
  }
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(test.size()), 2.0 / 20.0);
}

TEST(Synthetic, ImagesInUnitRange) {
  const auto d = generate_synthetic(tiny_data_config()).dataset;
  for (const auto& img : d.images) {
    EXPECT_EQ(img.shape(), (Shape{3, 8, 8}));
    for (float v : img.vec()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Synthetic, ConfigValidation) {
  SyntheticConfig c;
  c.num_classes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SyntheticConfig{};
  c.split_fractions = {0.5, 0.1, 0.1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = SyntheticConfig{};
  c.image_size = 10;
  c.patch_size = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SyntheticConfig{};
  c.anchors = {{{0, 0}, 9, 0.1}};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Sampling, ParetoRadiusBounds) {
  SyntheticConfig cfg;
  Rng rng(1);
  std::vector<double> r;
  for (int i = 0; i < 5000; ++i) r.push_back(sample_range_radius(cfg, rng));
  for (double v : r) {
    EXPECT_GE(v, cfg.radius_min);
    EXPECT_LE(v, cfg.radius_max);
  }
  std::sort(r.begin(), r.end());
  // Pareto(1.5) median is r_min * 2^(1/1.5).
  EXPECT_NEAR(r[2500], cfg.radius_min * std::pow(2.0, 1 / 1.5), 0.01);
}

TEST(Grid, FibonacciCoversSphere) {
  const auto g = fibonacci_grid(1000);
  ASSERT_EQ(g.size(), 1000u);
  double z = 0;
  std::size_t north = 0;
  for (const auto& p : g) {
    EXPECT_NO_THROW(p.validate());
    z += std::sin(p.lat * M_PI / 180);
    north += p.lat > 0;
  }
  EXPECT_NEAR(z / 1000, 0.0, 1e-3);
  EXPECT_EQ(north, 500u);
}

TEST(Ingest, WriteThenReadRoundTrip) {
  auto m = generate_synthetic(tiny_data_config()).dataset.manifest;
  for (auto& r : m.records) r.image_seed = 0;  // not part of the CSV
  m.records[0].id = "needs,\"quoting\"";
  write_csv(m, tmp("round.csv"));
  const auto res = ingest_csv(tmp("round.csv"));
  EXPECT_TRUE(res.issues.empty());
  EXPECT_EQ(res.manifest.records, m.records);
}

TEST(Ingest, HandWrittenFixture) {
  write_file(tmp("three.csv"),
             "lat,lng,id,class,split,image_path\n"
             "10.5,-20.25,a,0,train,images/a.gimg\n"
             "-89,180,b,2,val,images/b.gimg\n"
             "0,0,c,1,test,c.gimg\n");
  const auto res = ingest_csv(tmp("three.csv"));
  ASSERT_TRUE(res.issues.empty());
  const auto& r = res.manifest.records;
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0], (Record{"a", 0, {10.5, -20.25}, Split::train, "images/a.gimg", 0}));
  EXPECT_EQ(r[1], (Record{"b", 2, {-89, 180}, Split::val, "images/b.gimg", 0}));
  EXPECT_EQ(r[2], (Record{"c", 1, {0, 0}, Split::test, "c.gimg", 0}));
  EXPECT_EQ(res.manifest.class_names.size(), 3u);
}

TEST(Ingest, BadLatitudeNamesLineAndField) {
  std::string s = "id,class,lat,lng,split,image_path\n";
  for (int i = 0; i < 10; ++i) s += "r" + std::to_string(i) + ",0,1,1,train,x\n";
  s += "bad,0,95,1,train,x\n";
  write_file(tmp("lat.csv"), s);
  const auto res = ingest_csv(tmp("lat.csv"));
  ASSERT_EQ(res.issues.size(), 1u);
  EXPECT_EQ(res.issues[0].line, 12u);
  EXPECT_EQ(res.issues[0].field, "lat");
  EXPECT_EQ(res.manifest.records.size(), 10u);
}

TEST(Ingest, UnknownSplitAndTooManyBadRows) {
  write_file(tmp("split.csv"), "id,class,lat,lng,split,image_path\na,0,1,1,holdout,x\nb,0,1,1,train,x\n");
  try {
    ingest_csv(tmp("split.csv"));
    FAIL() << "expected abort";
  } catch (const ValidationError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("line 2"), std::string::npos) << w;
    EXPECT_NE(w.find("split"), std::string::npos) << w;
  }
}

TEST(Ingest, MissingColumn) {
  write_file(tmp("cols.csv"), "id,class,lat,split,image_path\na,0,1,train,x\n");
  EXPECT_THROW(ingest_csv(tmp("cols.csv")), ValidationError);
}

TEST(Images, RoundTripAndCorruption) {
  Tensor<float> img({3, 4, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 7.0f;
  write_image(img, tmp("x.gimg"));
  EXPECT_EQ(read_image(tmp("x.gimg")).vec(), img.vec());
  write_file(tmp("bad.gimg"), "GIMGxxxx");
  EXPECT_THROW(read_image(tmp("bad.gimg")), ValidationError);
  write_file(tmp("bad2.gimg"), "PNG0");
  EXPECT_THROW(read_image(tmp("bad2.gimg")), ValidationError);
}

TEST(Datasets, SaveLoadRoundTrip) {
  const auto d = generate_synthetic(tiny_data_config()).dataset;
  fs::remove_all(tmp("ds"));
  save_dataset(d, tmp("ds"));
  const auto e = load_dataset(tmp("ds"));
  EXPECT_EQ(e.manifest.class_names, d.manifest.class_names);
  ASSERT_EQ(e.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(e.record(i).id, d.record(i).id);
    EXPECT_EQ(e.record(i).location, d.record(i).location);
    EXPECT_EQ(e.images[i].vec(), d.images[i].vec());
  }
}

TEST(SplitByLocation, SingleCellEqualsGlobal) {
  auto cfg = tiny_data_config(4, 6);
  cfg.radius_max = 0.1;
  cfg.anchors = {{{10, 10}, 4, 0.05}};
  const auto d = generate_synthetic(cfg).dataset;
  const auto part = adaptive_partition(d.manifest.geo_records(), 100000);
  ASSERT_EQ(part.cells.size(), 1u);
  const auto ls = split_by_location(d.manifest, part, part.ids());
  ASSERT_EQ(ls.locations.size(), 1u);
  EXPECT_EQ(ls.locations[0].train, d.indices(Split::train));
  EXPECT_EQ(ls.locations[0].val, d.indices(Split::val));
  EXPECT_EQ(ls.locations[0].test, d.indices(Split::test));
}

TEST(SplitByLocation, FilterAndCounting) {
  SyntheticConfig cfg;
  cfg.num_classes = 12;
  cfg.samples_per_class = 40;
  cfg.radius_max = 0.6;
  cfg.seed = 21;
  const auto d = generate_synthetic(cfg).dataset;
  const auto& m = d.manifest;
  const auto part = adaptive_partition(m.geo_records(), 30);
  const auto ls = split_by_location(m, part, part.ids());
  std::size_t tr = 0, va = 0, te = 0;
  for (const auto& l : ls.locations) {
    for (auto i : l.test) EXPECT_TRUE(l.classes.count(m.records[i].class_id));
    for (auto i : l.train) EXPECT_TRUE(l.cell.contains(cell_from_latlng(m.records[i].location, CellId::kMaxLevel)));
    tr += l.train.size();
    va += l.val.size();
    te += l.test.size();
  }
  // The partition tiles every record, so train counts are exact; val is exact
  // unless a location was dropped for lacking train records.
  EXPECT_EQ(tr, d.indices(Split::train).size());
  if (ls.warnings.empty()) EXPECT_EQ(va, d.indices(Split::val).size());
  EXPECT_LE(va, d.indices(Split::val).size());
  EXPECT_LE(te, d.indices(Split::test).size());

  // A strict subset of locations counts strictly fewer records.
  auto some = part.ids();
  some.resize(some.size() / 2);
  const auto sub = split_by_location(m, part, some);
  std::size_t str = 0;
  for (const auto& l : sub.locations) str += l.train.size();
  EXPECT_LT(str, tr);
}

TEST(SplitByLocation, EmptyTrainLocationExcludedWithWarning) {
  DatasetManifest m;
  m.class_names = {"a"};
  m.records = {{"t", 0, {0, 0}, Split::train, "", 0}, {"v", 0, {0, 90}, Split::val, "", 0}};
  CellPartition part = adaptive_partition(m.geo_records(), 10);
  ASSERT_EQ(part.cells.size(), 2u);
  const auto ls = split_by_location(m, part, part.ids());
  EXPECT_EQ(ls.locations.size(), 1u);
  EXPECT_EQ(ls.warnings.size(), 1u);
}

TEST(SplitByLocation, PartitionMustCoverRecords) {
  DatasetManifest m;
  m.class_names = {"a"};
  m.records = {{"t", 0, {0, 0}, Split::train, "", 0}, {"u", 0, {0, 90}, Split::train, "", 0}};
  CellPartition part;
  part.cells = {{CellId::face_cell(0), 1, 1}};
  EXPECT_THROW(split_by_location(m, part, part.ids()), ValidationError);
}

TEST(Manifest, ValidateCatchesDuplicatesAndRange) {
  DatasetManifest m;
  m.class_names = {"a"};
  m.records = {{"x", 0, {0, 0}, Split::train, "", 0}, {"x", 0, {0, 0}, Split::train, "", 0}};
  EXPECT_THROW(m.validate(), ValidationError);
  m.records[1].id = "y";
  m.records[1].class_id = 3;
  EXPECT_THROW(m.validate(), ValidationError);
}
