#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geomoe/geocell.hpp"
#include "geomoe/rng.hpp"
#include "geomoe/tensor.hpp"

namespace geomoe {

enum class Split { train, val, test };

std::string_view split_name(Split s);
Split split_from_name(std::string_view s);

struct Record {
  std::string id;
  int class_id = 0;
  LatLng location;
  Split split = Split::train;
  std::string image_path;        // relative to the dataset directory
  std::uint64_t image_seed = 0;  // procedural seed for synthetic records

  friend bool operator==(const Record&, const Record&) = default;
};

struct DatasetManifest {
  std::vector<Record> records;
  std::vector<std::string> class_names;
  std::string config_hash;
  int channels = 3;
  int image_size = 16;

  std::vector<GeoRecord> geo_records(std::optional<Split> split = std::nullopt) const;
  void validate() const;
};

// Manifest plus decoded images ([C, H, W] each, aligned with records).
struct Dataset {
  DatasetManifest manifest;
  std::vector<Tensor<float>> images;

  std::size_t size() const { return manifest.records.size(); }
  const Record& record(std::size_t i) const { return manifest.records[i]; }
  std::vector<std::size_t> indices(Split s) const;
  std::size_t num_classes() const { return manifest.class_names.size(); }
};

// Spherical-cap geographic range of a class.
struct ClassRange {
  LatLng center;
  double radius = 0.1;  // radians
};

// Procedural look of a class: an oriented grating over a tinted background
// plus one coloured blob.
struct ClassSignature {
  double orientation = 0;  // radians
  double frequency = 1;    // cycles per image
  double phase = 0;
  std::array<double, 3> tint{};
  std::array<double, 3> blob_color{};
  double blob_x = 0.5, blob_y = 0.5;
};

// Cluster of class ranges around a fixed point.
struct RegionAnchor {
  LatLng center;
  int num_classes = 1;
  double spread = 0.1;  // radians; class centers jitter within this cap
};

struct SyntheticConfig {
  int num_classes = 8;
  int image_size = 16;
  int channels = 3;
  int patch_size = 4;
  int samples_per_class = 60;
  int min_samples_per_class = 10;
  bool imbalanced = false;
  double imbalance_exponent = 1.0;
  double pareto_alpha = 1.5;
  double radius_min = 0.05;  // radians
  double radius_max = M_PI;
  double noise = 0.08;
  std::array<double, 3> split_fractions{0.7, 0.1, 0.2};
  std::vector<RegionAnchor> anchors;  // classes beyond the anchors get uniform centers
  std::uint64_t seed = 0;

  void validate() const;
  std::string hash() const;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<ClassRange> ranges;
  std::vector<ClassSignature> signatures;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);
SyntheticData generate_synthetic(const SyntheticConfig& cfg, Rng& rng);

// Pareto(alpha) radius with scale radius_min, capped at radius_max.
double sample_range_radius(const SyntheticConfig& cfg, Rng& rng);
LatLng sample_in_cap(const ClassRange& range, Rng& rng);

Tensor<float> render_image(const ClassSignature& sig, int channels, int image_size, double noise, std::uint64_t seed);

// Approximately equal-area points (Fibonacci lattice).
std::vector<LatLng> fibonacci_grid(std::size_t n);
// Presence score exp(-d^2 / (2 r^2)) of each class at each grid point: [K][cells].
std::vector<std::vector<double>> presence_scores(const std::vector<ClassRange>& ranges, const std::vector<LatLng>& grid);

// CSV: id,class,lat,lng,split,image_path
struct IngestIssue {
  std::size_t line = 0;
  std::string field;
  std::string message;
};

struct IngestResult {
  DatasetManifest manifest;
  std::vector<IngestIssue> issues;
};

IngestResult ingest_csv(const std::filesystem::path& path);
void write_csv(const DatasetManifest& m, const std::filesystem::path& path);

// Directory layout: manifest.json, records.csv, images/<id>.gimg.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// "GIMG" magic, u32 C, H, W, then C*H*W little-endian float32 (planar).
void write_image(const Tensor<float>& img, const std::filesystem::path& path);
Tensor<float> read_image(const std::filesystem::path& path);

struct LocationSplit {
  CellId cell;
  std::vector<std::size_t> train, val, test;  // record indices
  std::set<int> classes;                      // classes in this location's train split
};

struct LocationSplitResult {
  std::vector<LocationSplit> locations;
  std::vector<std::string> warnings;
};

// train/val: records inside the cell; test: records inside the cell whose
// class occurs in the location's train split.
LocationSplitResult split_by_location(const DatasetManifest& m, const CellPartition& partition,
                                      const std::vector<CellId>& locations);

// Records of `split` whose class occurs in the train records inside `cell`.
std::vector<std::size_t> filter_by_location_species(const DatasetManifest& m, Split split, const CellId& cell);

}  // namespace geomoe
