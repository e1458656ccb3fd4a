#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "geomoe/data.hpp"
#include "geomoe/model.hpp"
#include "geomoe/train.hpp"

namespace geomoe {

struct AnalysisConfig {
  int cell_level = 0;                       // level of trace cell tokens
  std::string location;                     // default deployment cell token
  std::vector<double> percentiles{90, 99.9};  // route diagram bands
  std::vector<double> prune_percentiles{0, 25, 50, 75, 90, 99.9};
  bool per_layer_percentile = false;
  double coverage_threshold = 0.01;
  int grid_points = 10000;
  int n_max = kDefaultNMax;
  int max_level = 12;
};

// Every knob of a run in one JSON document. A single top-level seed feeds
// data generation, initialization and training.
struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticConfig data;
  ModelConfig model;
  TrainConfig train;     // dense training
  TrainConfig finetune;  // after conversion to experts
  MoEConfig moe;
  AnalysisConfig analysis;

  RunConfig();
  void validate() const;
  // Pushes the top-level seed into the sub-configs.
  void apply_seed();
};

nlohmann::ordered_json to_json(const RunConfig& c);
// Unknown keys and wrong types raise ConfigError naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);

// Reads a config file; GEOMOE_SEED, when set, replaces the seed.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

}  // namespace geomoe
