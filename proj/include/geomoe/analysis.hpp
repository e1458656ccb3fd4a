#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geomoe/data.hpp"
#include "geomoe/model.hpp"
#include "geomoe/train.hpp"

namespace geomoe {

// One routed patch at one MoE layer.
struct TraceRow {
  std::string sample_id;
  int class_id = 0;
  std::string cell_token;
  int layer = 0;
  int patch = 0;
  int expert = 0;

  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

// Shards over disjoint samples merge by concatenation.
using RouteTrace = std::vector<TraceRow>;

template <typename T>
RouteTrace trace_routes(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx, int cell_level,
                        std::size_t batch = 64);

// sample_id,class_id,cell_token,layer,patch,expert
void write_trace_csv(const RouteTrace& t, const std::filesystem::path& path);
RouteTrace read_trace_csv(const std::filesystem::path& path);

struct RoutingGraph {
  std::vector<int> layers;  // MoE layers in order
  int num_experts = 0;
  // counts[k][i * E + j]: patches routed to i at layers[k] and j at layers[k+1].
  std::vector<std::vector<std::uint64_t>> counts;
  std::vector<std::uint64_t> totals;       // patches per layer pair
  std::vector<std::vector<std::uint64_t>> visits;  // visits[k][e]: patches at layers[k] on expert e

  std::size_t num_pairs() const { return counts.size(); }
  double weight(std::size_t pair, int from, int to) const;
  std::string hash() const;
};

// num_experts = 0 infers it from the largest expert index.
RoutingGraph build_routing_graph(const RouteTrace& t, int num_experts = 0);

struct PruneSet {
  std::string method;  // threshold, per-expert, random
  std::optional<double> percentile;
  AblationSet nodes;
};

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (the
// smallest when p = 0).
double nearest_rank_percentile(std::vector<double> values, double p);

// Traversed-edge weights (count > 0); all pairs pooled, or one pair.
std::vector<double> edge_weights(const RoutingGraph& g, std::optional<std::size_t> pair = std::nullopt);

// Removes a node iff every traversed edge touching it weighs < theta; nodes
// with no traversed edge go whenever p > 0.
PruneSet threshold_prune(const RoutingGraph& g, double p, bool per_layer = false);

struct ImportanceEntry {
  ExpertNode node;
  double importance = 0;  // accuracy points lost when ablated alone
};

struct ImportanceTable {
  double baseline_acc = 0;
  std::vector<ImportanceEntry> entries;
};

template <typename T>
ImportanceTable per_expert_importance(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx);

void write_importance_csv(const ImportanceTable& t, const std::filesystem::path& path);
ImportanceTable read_importance_csv(const std::filesystem::path& path);

// Drops the `count` least important nodes; ties go to the less visited node
// (when a graph is given), then to the lower (layer, expert).
PruneSet per_expert_prune(const ImportanceTable& t, std::size_t count, const RoutingGraph* popularity = nullptr);

PruneSet random_prune(const std::vector<ExpertNode>& nodes, std::size_t count, std::uint64_t seed);

template <typename T>
std::vector<ExpertNode> expert_nodes(const GeoModel<T>& model);

// Records of `split` whose class has a train record inside the cell; all of
// the split when no cell is given. Empty result raises naming the cell.
std::vector<std::size_t> location_eval_indices(const DatasetManifest& m, Split split, const std::optional<CellId>& cell);

struct PrunedEval {
  EvalResult baseline;
  EvalResult pruned;
};

template <typename T>
PrunedEval evaluate_pruned(const GeoModel<T>& model, const AblationSet& prune, const Dataset& d,
                           const std::vector<std::size_t>& idx);

struct AffinityMatrix {
  std::vector<std::string> row_labels, col_labels;
  std::vector<std::vector<double>> values;
  std::vector<bool> present;  // false for rows without patches
  std::vector<std::string> warnings;
};

// Soft gate assignments at temperature t averaged over each class's patches.
template <typename T>
AffinityMatrix class_expert_affinity(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                     int layer, double t = kGateTemperature);

// Softmax over cells of the cosine between each patch's pre-MLP vector and the
// projected mean location embedding of each cell's train records, averaged
// per class.
template <typename T>
AffinityMatrix class_cell_affinity(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                   const std::vector<CellId>& cells, int layer, double t = kGateTemperature);

void write_affinity_csv(const AffinityMatrix& a, const std::filesystem::path& path);
AffinityMatrix read_affinity_csv(const std::filesystem::path& path);

struct CoverageStats {
  std::vector<double> coverage;  // per class
  std::vector<double> bin_edges;
  std::vector<std::size_t> histogram;
  double median = 0;
  double mean = 0;
  double top_decile_mean = 0;
};

// scores[k][g]: presence of class k at grid point g.
CoverageStats coverage_density(const std::vector<std::vector<double>>& scores, double threshold = 0.01,
                               std::size_t bins = 20);

void write_coverage_csv(const CoverageStats& c, const std::filesystem::path& path);

struct PruningManifest {
  std::string method;
  std::optional<double> percentile;
  std::vector<ExpertNode> nodes;
  std::string location;
  double baseline_acc = 0;
  double pruned_acc = 0;
  std::string graph_hash;

  AblationSet node_set() const { return {nodes.begin(), nodes.end()}; }
};

std::string manifest_to_json(const PruningManifest& m);
PruningManifest manifest_from_json(const std::string& text);
void write_manifest(const PruningManifest& m, const std::filesystem::path& path);
PruningManifest read_manifest(const std::filesystem::path& path);

}  // namespace geomoe
