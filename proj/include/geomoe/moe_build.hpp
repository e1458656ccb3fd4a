#pragma once

#include <map>
#include <vector>

#include "geomoe/data.hpp"
#include "geomoe/model.hpp"

namespace geomoe {

// Pre-MLP patch vectors of `layer` for the given records, one row per
// (record, patch) in that order. layer must be one of cfg.expert_layers.
template <typename T>
Tensor<double> collect_activations(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                   int layer, std::size_t batch = 64);

using ActivationCache = std::map<int, Tensor<double>>;

// All `layers` in one pass over the data.
template <typename T>
ActivationCache collect_activation_cache(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                         const std::vector<int>& layers, std::size_t batch = 64);

// Pads every class up to min_count entries by drawing duplicates with
// replacement from that class; the input order is kept and duplicates follow.
std::vector<std::size_t> balanced_resample(const DatasetManifest& m, const std::vector<std::size_t>& idx, int min_count,
                                           Rng& rng);

struct KMeansResult {
  Tensor<double> centroids;  // [E, D]
  std::vector<int> assignments;
  double inertia = 0;
  // Inertia after seeding and after each Lloyd iteration.
  std::vector<double> history;
  int iterations = 0;
};

// k-means++ seeding followed by up to refine_iters Lloyd iterations; stops
// early at a fixed point. Empty clusters move to the point farthest from its
// centroid.
KMeansResult kmeans(const Tensor<double>& points, int num_clusters, int refine_iters, std::uint64_t seed);

// Unit rows; rank r in 1..min(E, D) stores the best rank-r factor pair U V,
// rank 0 keeps the full matrix.
template <typename T>
ExpertGate<T> init_gate(const std::string& name, const Tensor<double>& centroids, int rank,
                        double temperature = kGateTemperature);

// Shape of the expert layers of a converted model, enough to rebuild it
// before loading weights.
struct MoEStructure {
  std::vector<int> layers;
  int num_experts = 0;
  int hidden = 0;
  int rank = 0;  // 0: unfactorized gate
  double temperature = kGateTemperature;
  bool gate_trainable = true;
};

template <typename T>
MoEStructure moe_structure(const GeoModel<T>& model);

// Installs zero-weight expert layers of the given shape.
template <typename T>
void install_placeholder_moe(GeoModel<T>& model, const MoEStructure& s);

// Copy of `dense` with each listed layer's MLP replaced by E fresh experts and
// a k-means gate built from cache[layer].
template <typename T>
GeoModel<T> convert_to_moe(const GeoModel<T>& dense, const ActivationCache& cache, const MoEConfig& cfg,
                           const std::vector<int>& layers, std::uint64_t seed);

// Closed-form parameter change of a conversion.
template <typename T>
long long expected_parameter_delta(const GeoModel<T>& dense, const MoEConfig& cfg, const std::vector<int>& layers);

}  // namespace geomoe
