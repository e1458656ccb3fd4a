#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "geomoe/analysis.hpp"
#include "geomoe/moe_build.hpp"
#include "helpers.hpp"

using namespace geomoe;
using namespace geomoe::testing;
namespace fs = std::filesystem;

namespace {

// Adds `mult` patches that follow `path` (one expert per layer in `layers`).
void add_path(RouteTrace& t, const std::vector<int>& layers, const std::vector<int>& path, int mult, int& next_id) {
  for (int m = 0; m < mult; ++m) {
    const std::string id = "s" + std::to_string(next_id++);
    for (std::size_t k = 0; k < layers.size(); ++k) t.push_back({id, 0, "0/", layers[k], 0, path[k]});
  }
}

RouteTrace random_trace(Rng& rng, std::size_t samples, std::size_t patches, const std::vector<int>& layers, int E) {
  RouteTrace t;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t p = 0; p < patches; ++p) {
      int e = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(E)));
      for (int l : layers) {
        // Sticky routes give a skewed edge distribution.
        if (rng.uniform() < 0.4) e = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(E)));
        t.push_back({"s" + std::to_string(s), static_cast<int>(s % 3), "0/", l, static_cast<int>(p), e});
      }
    }
  }
  return t;
}

// Exhaustive rule evaluation: a node goes iff none of its traversed incident
// edges reaches theta.
AblationSet oracle_prune(const RoutingGraph& g, double p) {
  std::vector<double> w;
  const int E = g.num_experts;
  for (std::size_t k = 0; k < g.num_pairs(); ++k) {
    for (int i = 0; i < E; ++i)
      for (int j = 0; j < E; ++j)
        if (g.counts[k][static_cast<std::size_t>(i * E + j)] > 0) w.push_back(g.weight(k, i, j));
  }
  std::sort(w.begin(), w.end());
  const double theta = w[std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p / 100.0 * w.size() - 1e-9))) - 1];
  AblationSet out;
  for (std::size_t k = 0; k < g.layers.size(); ++k) {
    for (int e = 0; e < E; ++e) {
      bool keep = false;
      for (int o = 0; o < E; ++o) {
        if (k + 1 < g.layers.size() && g.counts[k][static_cast<std::size_t>(e * E + o)] > 0 && g.weight(k, e, o) >= theta)
          keep = true;
        if (k > 0 && g.counts[k - 1][static_cast<std::size_t>(o * E + e)] > 0 && g.weight(k - 1, o, e) >= theta)
          keep = true;
      }
      if (!keep) out.insert({g.layers[k], e});
    }
  }
  return out;
}

struct Fixture {
  Dataset data;
  GeoModel<double> model;
};

Fixture converted(int experts = 4, std::uint64_t seed = 2) {
  auto dc = tiny_data_config(4, seed);
  Fixture f{generate_synthetic(dc).dataset, GeoModel<double>(tiny_model_config(4, seed))};
  const auto cache = collect_activation_cache(f.model, f.data, f.data.indices(Split::train), {0, 1});
  MoEConfig mc;
  mc.num_experts = experts;
  f.model = convert_to_moe(f.model, cache, mc, {0, 1}, seed);
  return f;
}

fs::path tmp(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "geomoe_analysis_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(RoutingGraph, SinglePatchEdgesWeighOne) {
  RouteTrace t;
  int id = 0;
  add_path(t, {1, 3, 5, 7}, {2, 0, 3, 1}, 1, id);
  const auto g = build_routing_graph(t, 4);
  ASSERT_EQ(g.num_pairs(), 3u);
  EXPECT_EQ(g.weight(0, 2, 0), 1.0);
  EXPECT_EQ(g.weight(1, 0, 3), 1.0);
  EXPECT_EQ(g.weight(2, 3, 1), 1.0);
  EXPECT_EQ(edge_weights(g).size(), 3u);
}

TEST(RoutingGraph, TransitionShares) {
  RouteTrace t;
  int id = 0;
  add_path(t, {0, 1}, {0, 0}, 3, id);
  add_path(t, {0, 1}, {0, 1}, 1, id);
  const auto g = build_routing_graph(t);
  EXPECT_EQ(g.num_experts, 2);
  EXPECT_DOUBLE_EQ(g.weight(0, 0, 0), 0.75);
  EXPECT_DOUBLE_EQ(g.weight(0, 0, 1), 0.25);
  EXPECT_EQ(g.totals[0], 4u);
}

TEST(RoutingGraph, NormalizationAndShardMerge) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int E = 2 + static_cast<int>(rng.uniform_int(7));
    const auto t = random_trace(rng, 1 + rng.uniform_int(6), 1 + rng.uniform_int(4), {1, 3, 5}, E);
    const auto g = build_routing_graph(t, E);
    std::uint64_t patches = t.size() / 3;
    for (std::size_t k = 0; k < g.num_pairs(); ++k) {
      double s = 0;
      std::uint64_t c = 0;
      for (int i = 0; i < E; ++i)
        for (int j = 0; j < E; ++j) {
          s += g.weight(k, i, j);
          c += g.counts[k][static_cast<std::size_t>(i * E + j)];
        }
      ASSERT_NEAR(s, 1.0, 1e-6);
      ASSERT_EQ(c, patches);
    }
    if (trial < 50) {
      // Four random shardings by sample, merged in random order.
      for (int sh = 0; sh < 4; ++sh) {
        std::map<std::string, int> shard_of;
        std::vector<RouteTrace> shards(3);
        for (const auto& r : t) {
          if (!shard_of.count(r.sample_id)) shard_of[r.sample_id] = static_cast<int>(rng.uniform_int(3));
          shards[static_cast<std::size_t>(shard_of[r.sample_id])].push_back(r);
        }
        rng.shuffle(shards);
        RouteTrace merged;
        for (const auto& s : shards) merged.insert(merged.end(), s.begin(), s.end());
        const auto gm = build_routing_graph(merged, E);
        ASSERT_EQ(gm.counts, g.counts);
        ASSERT_EQ(gm.visits, g.visits);
        ASSERT_EQ(gm.hash(), g.hash());
      }
    }
  }
}

TEST(RoutingGraph, RejectsDuplicatesAndRaggedLayers) {
  RouteTrace t{{"a", 0, "0/", 1, 0, 0}, {"a", 0, "0/", 1, 0, 1}};
  EXPECT_THROW(build_routing_graph(t), ValidationError);
  RouteTrace u{{"a", 0, "0/", 1, 0, 0}, {"a", 0, "0/", 3, 0, 1}, {"b", 0, "0/", 1, 0, 0}};
  EXPECT_THROW(build_routing_graph(u), ValidationError);
  EXPECT_THROW(build_routing_graph({}), ValidationError);
  RouteTrace v{{"a", 0, "0/", 1, 0, 5}};
  EXPECT_THROW(build_routing_graph(v, 4), ValidationError);
}

TEST(Percentile, NearestRank) {
  const std::vector<double> v{5, 1, 4, 2, 3};
  EXPECT_EQ(nearest_rank_percentile(v, 0), 1);
  EXPECT_EQ(nearest_rank_percentile(v, 20), 1);
  EXPECT_EQ(nearest_rank_percentile(v, 21), 2);
  EXPECT_EQ(nearest_rank_percentile(v, 50), 3);
  EXPECT_EQ(nearest_rank_percentile(v, 100), 5);
  EXPECT_THROW(nearest_rank_percentile({}, 50), ValidationError);
  EXPECT_THROW(nearest_rank_percentile(v, 101), ValidationError);
}

TEST(ThresholdPrune, ZeroPercentileIsEmpty) {
  Rng rng(1);
  const auto g = build_routing_graph(random_trace(rng, 10, 4, {0, 1, 2}, 5), 5);
  EXPECT_TRUE(threshold_prune(g, 0).nodes.empty());
  EXPECT_THROW(threshold_prune(g, -1), ValidationError);
}

TEST(ThresholdPrune, HandGraph) {
  RouteTrace t;
  int id = 0;
  const std::vector<int> layers{1, 3, 5};
  add_path(t, layers, {0, 0, 0}, 4, id);
  add_path(t, layers, {0, 1, 1}, 2, id);
  add_path(t, layers, {1, 1, 2}, 1, id);
  add_path(t, layers, {2, 0, 0}, 1, id);
  const auto g = build_routing_graph(t, 3);
  const auto ps = threshold_prune(g, 50);
  EXPECT_EQ(ps.nodes, (AblationSet{{1, 1}, {1, 2}, {3, 2}, {5, 2}}));
  EXPECT_EQ(ps.nodes, oracle_prune(g, 50));
}

TEST(ThresholdPrune, MatchesOracleAndIsMonotone) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int E = 2 + static_cast<int>(rng.uniform_int(6));
    const auto g = build_routing_graph(random_trace(rng, 2 + rng.uniform_int(10), 4, {1, 3, 5, 7}, E), E);
    AblationSet prev;
    for (double p : {0.0, 25.0, 50.0, 75.0, 90.0, 99.9}) {
      const auto ps = threshold_prune(g, p);
      if (p > 0) ASSERT_EQ(ps.nodes, oracle_prune(g, p)) << "p=" << p;
      ASSERT_TRUE(std::includes(ps.nodes.begin(), ps.nodes.end(), prev.begin(), prev.end())) << "p=" << p;
      prev = ps.nodes;
    }
  }
}

TEST(ThresholdPrune, PerLayerUsesPairThresholds) {
  RouteTrace t;
  int id = 0;
  add_path(t, {0, 1, 2}, {0, 0, 0}, 9, id);
  add_path(t, {0, 1, 2}, {1, 1, 1}, 1, id);
  const auto g = build_routing_graph(t, 2);
  EXPECT_TRUE(threshold_prune(g, 50).nodes.empty());  // theta = 0.1 keeps every traversed edge
  const auto pooled = threshold_prune(g, 75, false);
  const auto per = threshold_prune(g, 75, true);
  EXPECT_EQ(pooled.nodes, per.nodes);  // symmetric pairs
  EXPECT_EQ(pooled.nodes, (AblationSet{{0, 1}, {1, 1}, {2, 1}}));
}

TEST(Importance, MatchesReevaluationAndUnusedIsZero) {
  auto f = converted(8);
  const std::vector<std::size_t> idx{0};  // 4 patches: most experts unused
  const auto table = per_expert_importance(f.model, f.data, idx);
  EXPECT_EQ(table.entries.size(), 2u * 8u);
  const auto tr = trace_routes(f.model, f.data, idx, 0);
  std::set<ExpertNode> used;
  for (const auto& r : tr) used.insert({r.layer, r.expert});
  const double base = evaluate(f.model, f.data, idx).accuracy;
  EXPECT_EQ(table.baseline_acc, base);
  std::size_t unused = 0;
  for (const auto& e : table.entries) {
    if (!used.count(e.node)) {
      EXPECT_EQ(e.importance, 0.0);
      ++unused;
    } else {
      const AblationSet one{e.node};
      EXPECT_EQ(e.importance, base - evaluate(f.model, f.data, idx, &one).accuracy);
    }
  }
  EXPECT_GT(unused, 0u);

  const auto val = f.data.indices(Split::val);
  const auto t2 = per_expert_importance(f.model, f.data, val);
  for (const auto& e : t2.entries) {
    const AblationSet one{e.node};
    EXPECT_NEAR(e.importance, t2.baseline_acc - evaluate(f.model, f.data, val, &one).accuracy, 1e-12);
  }
}

TEST(Importance, CsvRoundTrip) {
  ImportanceTable t{87.5, {{{1, 0}, 12.5}, {{1, 1}, 0.0}, {{3, 0}, -2.25}}};
  write_importance_csv(t, tmp("imp.csv"));
  const auto r = read_importance_csv(tmp("imp.csv"));
  EXPECT_EQ(r.baseline_acc, 87.5);
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[2].node, (ExpertNode{3, 0}));
  EXPECT_EQ(r.entries[2].importance, -2.25);
}

TEST(PerExpertPrune, OrderAndTieBreaks) {
  ImportanceTable t{90, {{{1, 0}, 5}, {{1, 1}, 0}, {{3, 0}, 0}, {{3, 1}, -1}, {{3, 2}, 10}}};
  EXPECT_EQ(per_expert_prune(t, 1).nodes, (AblationSet{{3, 1}}));
  EXPECT_EQ(per_expert_prune(t, 2).nodes, (AblationSet{{3, 1}, {1, 1}}));  // tie -> lower layer
  EXPECT_EQ(per_expert_prune(t, 0).nodes, AblationSet{});
  EXPECT_EQ(per_expert_prune(t, 5).nodes.size(), 5u);
  EXPECT_THROW(per_expert_prune(t, 6), ValidationError);
  // With popularity: (3,0) seen less often than (1,1), so it goes first.
  RouteTrace tr;
  int id = 0;
  add_path(tr, {1, 3}, {1, 1}, 5, id);
  add_path(tr, {1, 3}, {0, 0}, 1, id);
  add_path(tr, {1, 3}, {0, 2}, 1, id);
  const auto g = build_routing_graph(tr, 3);
  EXPECT_EQ(per_expert_prune(t, 2, &g).nodes, (AblationSet{{3, 1}, {3, 0}}));
}

TEST(RandomPrune, DeterministicSubset) {
  std::vector<ExpertNode> nodes;
  for (int e = 0; e < 8; ++e) nodes.push_back({1, e});
  const auto a = random_prune(nodes, 3, 5), b = random_prune(nodes, 3, 5);
  EXPECT_EQ(a.nodes, b.nodes);
  EXPECT_EQ(a.nodes.size(), 3u);
  EXPECT_THROW(random_prune(nodes, 20, 1), ValidationError);
}

TEST(PrunedEval, EmptySetMatchesBaselineBitwise) {
  auto f = converted();
  const auto idx = f.data.indices(Split::test);
  const auto r = evaluate_pruned(f.model, {}, f.data, idx);
  EXPECT_EQ(r.pruned.accuracy, r.baseline.accuracy);
  EXPECT_EQ(r.pruned.loss, r.baseline.loss);
  EXPECT_EQ(r.pruned.predictions, r.baseline.predictions);
}

TEST(PrunedEval, AllExpertsGiveConstantFeatureModel) {
  auto f = converted();
  const auto idx = f.data.indices(Split::test);
  const auto nodes = expert_nodes(f.model);
  const AblationSet all(nodes.begin(), nodes.end());
  ForwardOptions fo;
  fo.ablation = &all;
  fo.hooks = true;
  TrainConfig plain;
  const auto res = f.model.forward(make_batch<double>(f.data, idx, false, plain, nullptr), fo);
  const auto& logits = res.logits.value();
  // Last layer is an expert layer, so every image sees the same features.
  for (std::size_t b = 1; b < idx.size(); ++b)
    for (std::size_t k = 0; k < 4; ++k) ASSERT_EQ(logits.at(b, k), logits.at(0, k));
  const auto row = logits.row(0);
  const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  std::size_t hit = 0;
  for (auto i : idx) hit += f.data.record(i).class_id == pred;
  const auto r = evaluate_pruned(f.model, all, f.data, idx);
  EXPECT_DOUBLE_EQ(r.pruned.accuracy, 100.0 * static_cast<double>(hit) / static_cast<double>(idx.size()));
}

TEST(LocationEval, FiltersBySpeciesInCell) {
  const auto d = generate_synthetic(tiny_data_config(6, 3)).dataset;
  const auto& m = d.manifest;
  const CellId cell = cell_from_latlng(m.records[0].location, 0);
  std::set<int> species;
  for (const auto& r : m.records)
    if (r.split == Split::train && cell.contains(cell_from_latlng(r.location, 5))) species.insert(r.class_id);
  const auto idx = location_eval_indices(m, Split::test, cell);
  std::size_t expect = 0;
  for (const auto& r : m.records) expect += r.split == Split::test && species.count(r.class_id);
  EXPECT_EQ(idx.size(), expect);
  for (auto i : idx) EXPECT_TRUE(species.count(m.records[i].class_id));
  EXPECT_EQ(location_eval_indices(m, Split::test, std::nullopt), d.indices(Split::test));
}

TEST(LocationEval, EmptyLocationNamesCell) {
  const auto d = generate_synthetic(tiny_data_config(2, 3)).dataset;
  std::set<int> faces;
  for (const auto& r : d.manifest.records) faces.insert(cell_from_latlng(r.location, 0).face());
  int empty = 0;
  while (faces.count(empty)) ++empty;
  ASSERT_LT(empty, 6);
  try {
    location_eval_indices(d.manifest, Split::test, CellId::face_cell(empty));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(empty) + "/"), std::string::npos);
  }
}

TEST(Trace, CsvRoundTripAndShape) {
  auto f = converted();
  const auto idx = f.data.indices(Split::val);
  const auto t = trace_routes(f.model, f.data, idx, 2);
  EXPECT_EQ(t.size(), idx.size() * 4 * 2);
  write_trace_csv(t, tmp("trace.csv"));
  EXPECT_EQ(read_trace_csv(tmp("trace.csv")), t);
  for (const auto& r : t) EXPECT_EQ(CellId::parse(r.cell_token).level(), 2);
}

TEST(Affinity, ClassExpertMatchesAccumulationOracle) {
  auto f = converted();
  const auto idx = f.data.indices(Split::val);
  const double temp = 0.05;
  const auto a = class_expert_affinity(f.model, f.data, idx, 1, temp);
  ForwardOptions fo;
  fo.hooks = true;
  TrainConfig plain;
  const auto res = f.model.forward(make_batch<double>(f.data, idx, false, plain, nullptr), fo);
  const auto& h = res.pre_mlp[1].value();
  const auto cm = f.model.layers()[1].moe->gate().effective_matrix();
  std::vector<std::vector<double>> acc(4, std::vector<double>(4, 0));
  std::vector<double> n(4, 0);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const int k = f.data.record(idx[r / 4]).class_id;
    std::vector<double> s(4);
    double hn = 0;
    for (double v : h.row(r)) hn += v * v;
    for (std::size_t e = 0; e < 4; ++e) {
      double dp = 0, cn = 0;
      for (std::size_t q = 0; q < 16; ++q) {
        dp += cm.at(e, q) * h.row(r)[q];
        cn += cm.at(e, q) * cm.at(e, q);
      }
      s[e] = dp / std::sqrt(cn * hn) / temp;
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (std::size_t e = 0; e < 4; ++e) acc[static_cast<std::size_t>(k)][e] += s[e] / z;
    n[static_cast<std::size_t>(k)] += 1;
  }
  for (std::size_t k = 0; k < 4; ++k) {
    ASSERT_EQ(a.present[k], n[k] > 0);
    if (!a.present[k]) continue;
    double rs = 0;
    for (std::size_t e = 0; e < 4; ++e) {
      EXPECT_NEAR(a.values[k][e], acc[k][e] / n[k], 1e-6);
      rs += a.values[k][e];
    }
    EXPECT_NEAR(rs, 1.0, 1e-6);
  }
  EXPECT_THROW(class_expert_affinity(f.model, f.data, idx, 5), ConfigError);
}

TEST(Affinity, HardRoutedClassIsOneHot) {
  const Dataset d = two_tone_dataset(24);
  auto mc = tiny_model_config(2);
  mc.expert_layers = {1};
  GeoModel<double> model(mc);
  const auto cache = collect_activation_cache(model, d, d.indices(Split::train), {1});
  MoEConfig cfg;
  cfg.num_experts = 4;
  model = convert_to_moe(model, cache, cfg, {1}, 1);
  // Centroid 3 = mean dark patch, the rest point the other way.
  std::vector<std::size_t> dark;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.record(i).class_id == 0) dark.push_back(i);
  const auto acts = collect_activations(model, d, dark, 1);
  Tensor<double> c({4, 16});
  for (std::size_t r = 0; r < acts.rows(); ++r)
    for (std::size_t q = 0; q < 16; ++q) c.at(3, q) += acts.row(r)[q];
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t q = 0; q < 16; ++q) c.at(e, q) = -c.at(3, q) + 0.01 * static_cast<double>(e + 1) * (q == e);
  model.layers()[1].moe->gate() = init_gate<double>("layer1.moe.gate", c, 0);
  const auto a = class_expert_affinity(model, d, dark, 1);
  EXPECT_NEAR(a.values[0][3], 1.0, 1e-9);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_NEAR(a.values[0][e], 0.0, 1e-9);
  EXPECT_FALSE(a.present[1]);
}

TEST(Affinity, ClassCellSingleAndDuplicateCells) {
  auto f = converted();
  const auto idx = f.data.indices(Split::val);
  const CellId c = cell_from_latlng(f.data.record(f.data.indices(Split::train)[0]).location, 0);
  const auto one = class_cell_affinity(f.model, f.data, idx, {c}, 1, 1.0);
  for (std::size_t k = 0; k < 4; ++k)
    if (one.present[k]) EXPECT_NEAR(one.values[k][0], 1.0, 1e-12);
  const auto two = class_cell_affinity(f.model, f.data, idx, {c, c}, 1, 1.0);
  for (std::size_t k = 0; k < 4; ++k) {
    if (!two.present[k]) continue;
    EXPECT_NEAR(two.values[k][0], 0.5, 1e-12);
    EXPECT_NEAR(two.values[k][1], 0.5, 1e-12);
  }
}

TEST(Affinity, ClassCellMatchesDirectEvaluation) {
  auto dc = tiny_data_config(3, 4);
  dc.radius_max = 0.2;
  dc.anchors = {{{0, 0}, 1, 0.05}, {{0, 90}, 1, 0.05}, {{0, 180}, 1, 0.05}};
  auto mc = tiny_model_config(3, 4);
  mc.locenc.out_dim = 16;
  const auto d = generate_synthetic(dc).dataset;
  GeoModel<double> m(mc);
  const std::vector<CellId> cells{CellId::face_cell(0), CellId::face_cell(1), CellId::face_cell(3)};
  const auto idx = d.indices(Split::val);
  const double temp = 0.5;
  const auto a = class_cell_affinity(m, d, idx, cells, 1, temp);
  ASSERT_EQ(a.col_labels.size(), 3u);

  std::vector<std::vector<double>> proj;
  for (const auto& cell : cells) {
    std::vector<LatLng> locs;
    for (const auto& r : d.manifest.records)
      if (r.split == Split::train && cell_from_latlng(r.location, 0) == cell) locs.push_back(r.location);
    Tensor<double> mean({1, 16});
    for (const auto& l : locs) {
      const auto e = m.location_encoder().encode(l);
      for (std::size_t q = 0; q < 16; ++q) mean[q] += e[q] / static_cast<double>(locs.size());
    }
    Rng unused(0);
    auto p = m.projectors().project(constant(mean), 1, false, unused).value().vec();
    double n = 0;
    for (double v : p) n += v * v;
    for (auto& v : p) v /= std::sqrt(n);
    proj.push_back(p);
  }
  ForwardOptions fo;
  fo.hooks = true;
  TrainConfig plain;
  const auto h = m.forward(make_batch<double>(d, idx, false, plain, nullptr), fo).pre_mlp[1].value();
  std::vector<std::vector<double>> acc(3, std::vector<double>(3, 0));
  std::vector<double> cnt(3, 0);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const auto k = static_cast<std::size_t>(d.record(idx[r / 4]).class_id);
    double hn = 0;
    for (double v : h.row(r)) hn += v * v;
    std::vector<double> s(3);
    double z = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      double dp = 0;
      for (std::size_t q = 0; q < 16; ++q) dp += h.row(r)[q] * proj[j][q];
      s[j] = std::exp(dp / std::sqrt(hn) / temp);
      z += s[j];
    }
    for (std::size_t j = 0; j < 3; ++j) acc[k][j] += s[j] / z;
    cnt[k] += 1;
  }
  for (std::size_t k = 0; k < 3; ++k) {
    ASSERT_GT(cnt[k], 0);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.values[k][j], acc[k][j] / cnt[k], 1e-6);
  }
}

TEST(Affinity, CsvRoundTrip) {
  AffinityMatrix a;
  a.row_labels = {"a", "b"};
  a.col_labels = {"0/", "1/"};
  a.values = {{0.25, 0.75}, {1, 0}};
  a.present = {true, true};
  write_affinity_csv(a, tmp("aff.csv"));
  const auto r = read_affinity_csv(tmp("aff.csv"));
  EXPECT_EQ(r.row_labels, a.row_labels);
  EXPECT_EQ(r.col_labels, a.col_labels);
  EXPECT_EQ(r.values, a.values);
}

TEST(Coverage, Extremes) {
  const auto c = coverage_density({std::vector<double>(10, 1.0), std::vector<double>(10, 0.01)}, 0.01);
  EXPECT_EQ(c.coverage[0], 1.0);
  EXPECT_EQ(c.coverage[1], 0.0);
  std::size_t total = 0;
  for (auto h : c.histogram) total += h;
  EXPECT_EQ(total, 2u);
  EXPECT_EQ(c.histogram.back(), 1u);
  EXPECT_EQ(c.histogram.front(), 1u);
}

TEST(Coverage, ParetoRadiiSkewCoverage) {
  SyntheticConfig cfg;
  cfg.num_classes = 200;
  cfg.samples_per_class = 10;
  cfg.seed = 5;
  const auto sd = generate_synthetic(cfg);
  const auto c = coverage_density(presence_scores(sd.ranges, fibonacci_grid(4000)), 0.01);
  EXPECT_LT(c.median, c.mean);
  EXPECT_GE(c.top_decile_mean, c.median);
}

TEST(Manifest, JsonRoundTrip) {
  PruningManifest m{"threshold", 50.0, {{1, 2}, {3, 0}}, "0/12", 91.25, 80.5, "00ff"};
  const auto r = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(r.method, m.method);
  EXPECT_EQ(r.percentile, m.percentile);
  EXPECT_EQ(r.nodes, m.nodes);
  EXPECT_EQ(r.location, m.location);
  EXPECT_EQ(r.baseline_acc, m.baseline_acc);
  EXPECT_EQ(r.pruned_acc, m.pruned_acc);
  EXPECT_EQ(r.graph_hash, m.graph_hash);
  PruningManifest n{"random", std::nullopt, {}, "", 1, 1, ""};
  EXPECT_FALSE(manifest_from_json(manifest_to_json(n)).percentile.has_value());
  EXPECT_THROW(manifest_from_json("{\"method\": 3}"), ValidationError);
}
