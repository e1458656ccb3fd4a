// Acceptance suite: one PASS/FAIL line per criterion.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "geomoe/analysis.hpp"
#include "geomoe/checkpoint.hpp"
#include "geomoe/config.hpp"
#include "geomoe/gradcheck.hpp"
#include "geomoe/losses.hpp"
#include "geomoe/moe_build.hpp"

using namespace geomoe;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

SyntheticConfig tiny_data(int classes, std::uint64_t seed) {
  SyntheticConfig c;
  c.num_classes = classes;
  c.image_size = 8;
  c.patch_size = 4;
  c.samples_per_class = 12;
  c.min_samples_per_class = 3;
  c.radius_max = 0.4;
  c.seed = seed;
  return c;
}

// 2 blocks of dim 16 with 2 heads.
ModelConfig tiny_model(int classes, std::uint64_t seed) {
  ModelConfig m;
  m.num_classes = classes;
  m.image_size = 8;
  m.patch_size = 4;
  m.blocks = {{1, 16, 2}, {1, 16, 2}};
  m.expert_layers = {0, 1};
  m.classifier = {16, 8, 0.1};
  m.locenc = {4, 0.05, M_PI, 12, 8};
  m.seed = seed;
  return m;
}

template <typename T>
struct Converted {
  Dataset data;
  GeoModel<T> model;
};

template <typename T>
Converted<T> tiny_converted(int experts, std::uint64_t seed) {
  Converted<T> c{generate_synthetic(tiny_data(4, seed)).dataset, GeoModel<T>(tiny_model(4, seed))};
  const auto cache = collect_activation_cache(c.model, c.data, c.data.indices(Split::train), {0, 1});
  MoEConfig mc;
  mc.num_experts = experts;
  c.model = convert_to_moe(c.model, cache, mc, {0, 1}, seed);
  return c;
}

RouteTrace random_trace(Rng& rng, std::size_t samples, std::size_t patches, const std::vector<int>& layers, int E) {
  RouteTrace t;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t p = 0; p < patches; ++p) {
      int e = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(E)));
      for (int l : layers) {
        if (rng.uniform() < 0.4) e = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(E)));
        t.push_back({"s" + std::to_string(s), static_cast<int>(s % 3), "0/", l, static_cast<int>(p), e});
      }
    }
  }
  return t;
}

// 1
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto d = generate_synthetic(tiny_data(4, 1)).dataset;
  GeoModel<double> m(tiny_model(4, 1));
  TrainConfig cfg;
  cfg.mixup_alpha = 0.4;
  const std::vector<std::size_t> idx{0, 5, 13, 20, 31, 40};
  std::vector<Var<double>> leaves;
  for (auto* p : m.parameters()) leaves.push_back(p->var());
  const auto r = finite_diff_check<double>(
      [&] {
        Rng rng(77);
        return total_loss(m, d, idx, cfg, rng, true);
      },
      leaves);
  const double sec = seconds_since(t0);
  return {r.max_rel_error <= 1e-3 && sec < 120.0 && r.coords_checked > 0,
          "max rel err " + fmt(r.max_rel_error) + " over " + std::to_string(r.coords_checked) + " coords, " +
              fmt(sec) + " s"};
}

// 2
Outcome ablation_exactness() {
  auto c = tiny_converted<float>(4, 2);
  Rng rng(7);
  std::size_t checked = 0;
  double worst = 0;
  for (std::size_t li = 0; li < c.model.layers().size(); ++li) {
    const auto& layer = *c.model.layers()[li].moe;
    for (int trial = 0; trial < 50; ++trial) {
      Tensor<float> f({2, 4, 16});
      for (auto& v : f.vec()) v = static_cast<float>(rng.normal() * 3);
      std::vector<int> routes;
      layer.forward(constant(f), &routes);
      const std::set<int> ablate{routes[rng.uniform_int(routes.size())]};
      const auto out = layer.forward(constant(f), &routes, &ablate).value();
      for (std::size_t r = 0; r < routes.size(); ++r) {
        if (!ablate.count(routes[r])) continue;
        for (std::size_t k = 0; k < 16; ++k) worst = std::max(worst, static_cast<double>(std::abs(out.row(r)[k])));
        ++checked;
      }
    }
  }
  return {checked > 0 && worst <= 1e-6,
          std::to_string(checked) + " ablated patches, max |x| " + fmt(worst)};
}

// 3
Outcome graph_normalization() {
  Rng rng(99);
  double worst = 0;
  bool merge_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int E = 2 + static_cast<int>(rng.uniform_int(7));
    const auto t = random_trace(rng, 1 + rng.uniform_int(6), 1 + rng.uniform_int(4), {1, 3, 5}, E);
    const auto g = build_routing_graph(t, E);
    for (std::size_t k = 0; k < g.num_pairs(); ++k) {
      double s = 0;
      for (int i = 0; i < E; ++i)
        for (int j = 0; j < E; ++j) s += g.weight(k, i, j);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    for (int sh = 0; sh < 4; ++sh) {
      std::map<std::string, std::size_t> shard_of;
      std::vector<RouteTrace> shards(3);
      for (const auto& r : t) {
        if (!shard_of.count(r.sample_id)) shard_of[r.sample_id] = rng.uniform_int(3);
        shards[shard_of[r.sample_id]].push_back(r);
      }
      rng.shuffle(shards);
      RouteTrace merged;
      for (const auto& s : shards) merged.insert(merged.end(), s.begin(), s.end());
      const auto gm = build_routing_graph(merged, E);
      merge_ok = merge_ok && gm.counts == g.counts && gm.visits == g.visits && gm.hash() == g.hash();
    }
  }
  return {worst <= 1e-6 && merge_ok,
          "max |sum-1| " + fmt(worst) + ", shard merge " + (merge_ok ? "invariant" : "differs")};
}

// 4
Outcome pruning_monotonicity() {
  Rng rng(7);
  bool mono = true;
  for (int trial = 0; trial < 200 && mono; ++trial) {
    const int E = 2 + static_cast<int>(rng.uniform_int(6));
    const auto g = build_routing_graph(random_trace(rng, 2 + rng.uniform_int(10), 4, {1, 3, 5, 7}, E), E);
    AblationSet prev;
    for (double p : {0.0, 25.0, 50.0, 75.0, 90.0, 99.9}) {
      const auto ps = threshold_prune(g, p);
      mono = mono && std::includes(ps.nodes.begin(), ps.nodes.end(), prev.begin(), prev.end());
      prev = ps.nodes;
    }
  }
  auto c = tiny_converted<float>(4, 3);
  const auto val = c.data.indices(Split::val), test = c.data.indices(Split::test);
  const auto g = build_routing_graph(trace_routes(c.model, c.data, val, 0), 4);
  AblationSet prev;
  for (double p : {0.0, 25.0, 50.0, 75.0, 90.0, 99.9}) {
    const auto ps = threshold_prune(g, p);
    mono = mono && std::includes(ps.nodes.begin(), ps.nodes.end(), prev.begin(), prev.end());
    prev = ps.nodes;
  }
  const auto r = evaluate_pruned(c.model, threshold_prune(g, 0).nodes, c.data, test);
  const bool bitwise = std::memcmp(&r.baseline.accuracy, &r.pruned.accuracy, sizeof(double)) == 0 &&
                       std::memcmp(&r.baseline.loss, &r.pruned.loss, sizeof(double)) == 0 &&
                       r.baseline.predictions == r.pruned.predictions;
  return {mono && bitwise, std::string("subset chain ") + (mono ? "holds" : "broken") + ", p=0 accuracy " +
                               fmt(r.pruned.accuracy) + (bitwise ? " bitwise equal" : " differs")};
}

// Shared benchmark runs for criteria 5 and 6.
struct SeedRun {
  std::uint64_t seed = 0;
  double seconds = 0;
  double test_acc = 0;
  std::size_t location_classes = 0;
  std::size_t nodes = 0;
  std::size_t dropped50 = 0;
  double base_acc = 0, thr50_acc = 0;
  // p -> (dropped, threshold acc, per-expert acc)
  std::map<double, std::tuple<std::size_t, double, double>> compare;
  std::string error;
};

SeedRun benchmark_seed(const RunConfig& base, std::uint64_t seed) {
  const auto t0 = Clock::now();
  SeedRun out;
  out.seed = seed;
  RunConfig run = base;
  run.seed = seed;
  run.apply_seed();
  const auto d = generate_synthetic(run.data).dataset;
  GeoModel<float> dense(run.model);
  const auto r1 = train(dense, d, run.train);
  if (r1.diverged) {
    out.error = "dense training diverged: " + r1.message;
    return out;
  }
  const auto& layers = run.model.expert_layers;
  const auto cache = collect_activation_cache(dense, d, d.indices(Split::train), layers);
  auto moe = convert_to_moe(dense, cache, run.moe, layers, Rng::derive(run.seed, 4));
  const auto r2 = train(moe, d, run.finetune);
  if (r2.diverged) {
    out.error = "finetune diverged: " + r2.message;
    return out;
  }
  out.test_acc = evaluate(moe, d, d.indices(Split::test)).accuracy;

  const auto loc = CellId::parse(run.analysis.location);
  const auto val = location_eval_indices(d.manifest, Split::val, loc);
  const auto test = location_eval_indices(d.manifest, Split::test, loc);
  std::set<int> classes;
  for (auto i : test) classes.insert(d.record(i).class_id);
  out.location_classes = classes.size();

  const auto g = build_routing_graph(trace_routes(moe, d, val, 0), run.moe.num_experts);
  out.nodes = expert_nodes(moe).size();
  out.base_acc = evaluate(moe, d, test).accuracy;
  const auto p50 = threshold_prune(g, 50);
  out.dropped50 = p50.nodes.size();
  out.thr50_acc = evaluate(moe, d, test, &p50.nodes).accuracy;

  const auto imp = per_expert_importance(moe, d, val);
  for (double p : {50.0, 75.0, 90.0}) {
    const auto ps = threshold_prune(g, p);
    if (ps.nodes.empty()) continue;
    const auto pe = per_expert_prune(imp, ps.nodes.size(), &g);
    out.compare[p] = {ps.nodes.size(), evaluate(moe, d, test, &ps.nodes).accuracy,
                      evaluate(moe, d, test, &pe.nodes).accuracy};
  }
  out.seconds = seconds_since(t0);
  return out;
}

bool seed_passes_comparison(const SeedRun& s) {
  if (!s.error.empty() || s.compare.empty()) return false;
  for (const auto& [p, v] : s.compare) {
    if (std::get<2>(v) < std::get<1>(v)) return false;
  }
  return true;
}

bool seed_passes_specialization(const SeedRun& s, std::size_t num_classes) {
  const double chance = 100.0 / static_cast<double>(num_classes);
  return s.error.empty() && s.test_acc >= 3 * chance && s.location_classes == 5 &&
         4 * s.dropped50 >= s.nodes && s.base_acc - s.thr50_acc <= 5.0 && s.seconds <= 15 * 60;
}

// 7
Outcome kmeans_oracle() {
  Tensor<double> pts({4, 1}, {0, 1, 9, 10});
  bool ok = true;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = kmeans(pts, 2, 2, seed);
    std::vector<double> c{r.centroids[0], r.centroids[1]};
    std::sort(c.begin(), c.end());
    worst = std::max({worst, std::abs(c[0] - 0.5), std::abs(c[1] - 9.5), std::abs(r.inertia - 1.0)});
  }
  // Brute force over all 2-partitions of {0,1,9,10}.
  const double xs[4] = {0, 1, 9, 10};
  double best = 1e300;
  for (int mask = 1; mask < 15; ++mask) {
    double s[2] = {0, 0}, n[2] = {0, 0}, cost = 0;
    for (int i = 0; i < 4; ++i) {
      s[(mask >> i) & 1] += xs[i];
      n[(mask >> i) & 1] += 1;
    }
    for (int i = 0; i < 4; ++i) cost += std::pow(xs[i] - s[(mask >> i) & 1] / n[(mask >> i) & 1], 2);
    best = std::min(best, cost);
  }
  ok = worst <= 1e-12 && std::abs(best - 1.0) <= 1e-12;
  Rng rng(11);
  bool mono = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng.uniform_int(40);
    Tensor<double> p({n, 2});
    for (auto& v : p.vec()) v = rng.normal() * 3;
    const auto r = kmeans(p, 2 + static_cast<int>(rng.uniform_int(5)), 10, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 1; i < r.history.size(); ++i) mono = mono && r.history[i] <= r.history[i - 1] + 1e-9;
  }
  return {ok && mono, "centroid/inertia err " + fmt(worst) + ", brute force " + fmt(best) + ", Lloyd " +
                          (mono ? "non-increasing" : "increased")};
}

Var<double> rows(const std::vector<std::vector<double>>& z) {
  Tensor<double> t({z.size(), z[0].size()});
  for (std::size_t r = 0; r < z.size(); ++r)
    for (std::size_t c = 0; c < z[r].size(); ++c) t.at(r, c) = z[r][c];
  return Var<double>(t, false);
}

double supcon_brute(const std::vector<std::vector<double>>& z, const std::vector<int>& y, double tau) {
  const std::size_t n = z.size();
  auto lab = [&](std::size_t i) { return y[i % y.size()]; };
  auto sim = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t k = 0; k < z[a].size(); ++k) s += z[a][k] * z[b][k];
    return s / tau;
  };
  double total = 0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    std::vector<std::size_t> pos;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      denom += std::exp(sim(i, a));
      if (lab(a) == lab(i)) pos.push_back(a);
    }
    if (pos.empty()) continue;
    double s = 0;
    for (auto p : pos) s += std::log(std::exp(sim(i, p)) / denom);
    total += -s / static_cast<double>(pos.size());
    ++anchors;
  }
  return total / static_cast<double>(anchors);
}

// 8
Outcome supcon_analytic() {
  const double a = supcon_loss<double>(rows({{1, 0}, {1, 0}, {1, 0}, {1, 0}}), {0, 0}, 0.07).value()[0];
  const std::vector<std::vector<double>> z{{1, 0}, {0, 1}, {1, 0}, {0, 1}, {1, 0}, {0, 1}};
  const std::vector<int> y{0, 1, 0, 1, 0, 1};
  const double b = supcon_loss<double>(rows(z), y, 1.0).value()[0];
  const double ob = supcon_brute(z, y, 1.0);
  const double ea = std::abs(a - std::log(3.0)), eb = std::abs(b - ob);
  return {ea <= 1e-5 && eb <= 1e-6, "|L - ln3| " + fmt(ea) + ", |L - oracle| " + fmt(eb)};
}

// 9
Outcome geocell_suite() {
  Rng rng(2024);
  std::size_t parent_bad = 0, token_bad = 0, sibling_bad = 0;
  for (int n = 0; n < 10000; ++n) {
    const double z = rng.uniform(-1.0, 1.0);
    const LatLng p{std::asin(z) * 180.0 / M_PI, rng.uniform(-180.0, 180.0)};
    const auto st = face_st_from_latlng(p);
    CellId prev = cell_from_latlng(p, 0);
    for (int level = 1; level <= 12; ++level) {
      const CellId c = cell_from_latlng(p, level);
      if (c.parent() != prev || !prev.contains(c)) ++parent_bad;
      if (CellId::parse(c.token()) != c) ++token_bad;
      // The point's (s, t) lies in exactly one sibling square, and it is c.
      const double scale = std::ldexp(1.0, level);
      int hits = 0;
      for (const auto& sib : prev.children()) {
        const auto [i, j] = sib.ij();
        const bool in = sib.face() == st.face && st.s * scale >= i && st.s * scale < i + 1 && st.t * scale >= j &&
                        st.t * scale < j + 1;
        if (in) {
          ++hits;
          if (sib != c) ++sibling_bad;
        }
      }
      if (hits != 1) ++sibling_bad;
      prev = c;
    }
  }
  std::vector<GeoRecord> recs;
  for (int k = 0; k < 4000; ++k) {
    const int cls = static_cast<int>(rng.uniform_int(3));
    const LatLng center = cls == 0 ? LatLng{10, 10} : (cls == 1 ? LatLng{-30, 100} : LatLng{60, -40});
    recs.push_back({{center.lat + rng.normal() * 2, center.lng + rng.normal() * 2}, cls});
  }
  bool nmax_ok = kDefaultNMax == 10000;
  for (std::size_t n_max : {50u, 200u, 1000u}) {
    const auto part = adaptive_partition(recs, n_max);
    std::size_t total = 0;
    for (const auto& c : part.cells) {
      nmax_ok = nmax_ok && c.max_class_count <= n_max;
      total += c.records;
    }
    nmax_ok = nmax_ok && !part.hit_max_level && total == recs.size();
  }
  return {parent_bad == 0 && token_bad == 0 && sibling_bad == 0 && nmax_ok,
          "parent " + std::to_string(parent_bad) + ", token " + std::to_string(token_bad) + ", sibling " +
              std::to_string(sibling_bad) + " failures; n_max " + (nmax_ok ? "respected" : "violated")};
}

// 10
Outcome coverage_power_law(int grid_points) {
  SyntheticConfig cfg;
  cfg.num_classes = 200;
  cfg.samples_per_class = 10;
  cfg.seed = 0;
  const auto sd = generate_synthetic(cfg);
  const auto c = coverage_density(presence_scores(sd.ranges, fibonacci_grid(static_cast<std::size_t>(grid_points))), 0.01);
  const double ratio = c.median > 0 ? c.top_decile_mean / c.median : INFINITY;
  return {ratio >= 5.0, "top-decile mean " + fmt(c.top_decile_mean) + ", median " + fmt(c.median) + ", ratio " +
                            fmt(ratio)};
}

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 11
Outcome checkpoint_round_trip(const std::string& cli) {
  const auto dir = fs::temp_directory_path() / "geomoe_acceptance";
  fs::create_directories(dir);
  auto c = tiny_converted<float>(4, 5);
  RunConfig run;
  run.data = tiny_data(4, 5);
  run.model = tiny_model(4, 5);
  save_model(c.model, run, dir / "m.gmoe");
  const auto back = load_model(dir / "m.gmoe");
  const auto a = c.model.state(), b = back.model.state();
  bool equal = a.size() == b.size();
  for (const auto& [name, t] : a) {
    const auto it = b.find(name);
    equal = equal && it != b.end() && it->second.shape() == t.shape() &&
            std::memcmp(t.data(), it->second.data(), t.size() * sizeof(float)) == 0;
  }
  std::string bytes;
  {
    std::ifstream in(dir / "m.gmoe", std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    bytes = os.str();
  }
  bytes[2] ^= 0x20;
  std::ofstream(dir / "bad.gmoe", std::ios::binary) << bytes;
  const int code = run_command(cli + " eval --ckpt " + (dir / "bad.gmoe").string() + " --data " + dir.string() +
                               " >/dev/null 2>&1");
  return {equal && code == 2, std::to_string(a.size()) + " tensors " + (equal ? "bitwise equal" : "differ") +
                                  ", corrupted header exit " + std::to_string(code)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string config = GEOMOE_BENCHMARK_CONFIG;
  std::string cli = GEOMOE_CLI;
  std::vector<int> only;
  int seeds = 10;
  app.add_option("--config", config, "Benchmark config for criteria 5 and 6")->check(CLI::ExistingFile);
  app.add_option("--cli", cli, "Path of the geomoe executable");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_option("--seeds", seeds, "Benchmark seeds")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  auto selected = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  int failures = 0;
  auto report = [&](int k, const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << k << "  " << name << ": " << o.detail
              << std::endl;
    if (!o.pass) ++failures;
  };
  auto guarded = [&](int k, const std::string& name, const std::function<Outcome()>& f) {
    if (!selected(k)) return;
    try {
      report(k, name, f());
    } catch (const std::exception& e) {
      report(k, name, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "gradient suite", gradient_suite);
  guarded(2, "ablation exactness", ablation_exactness);
  guarded(3, "routing-graph normalization", graph_normalization);
  guarded(4, "pruning monotonicity", pruning_monotonicity);

  if (selected(5) || selected(6)) {
    const auto t0 = Clock::now();
    std::vector<SeedRun> runs;
    RunConfig base;
    try {
      base = load_run_config(config);
      for (int s = 0; s < seeds; ++s) {
        runs.push_back(benchmark_seed(base, static_cast<std::uint64_t>(s)));
        const auto& r = runs.back();
        std::cout << "      seed " << r.seed << ": " << fmt(r.seconds) << " s, test acc " << fmt(r.test_acc)
                  << ", location classes " << r.location_classes << ", p50 drops " << r.dropped50 << "/" << r.nodes
                  << " acc " << fmt(r.base_acc) << " -> " << fmt(r.thr50_acc);
        for (const auto& [p, v] : r.compare)
          std::cout << "; p" << p << " n=" << std::get<0>(v) << " thr " << fmt(std::get<1>(v)) << " imp "
                    << fmt(std::get<2>(v));
        if (!r.error.empty()) std::cout << "; " << r.error;
        std::cout << std::endl;
      }
    } catch (const std::exception& e) {
      if (selected(5)) report(5, "method comparison", {false, std::string("error: ") + e.what()});
      if (selected(6)) report(6, "geo specialization", {false, std::string("error: ") + e.what()});
      runs.clear();
    }
    if (!runs.empty()) {
      const double total = seconds_since(t0);
      const auto n5 = std::count_if(runs.begin(), runs.end(), seed_passes_comparison);
      const auto n6 = std::count_if(runs.begin(), runs.end(), [&](const SeedRun& r) {
        return seed_passes_specialization(r, static_cast<std::size_t>(base.model.num_classes));
      });
      const auto need5 = (8 * runs.size() + 9) / 10, need6 = (7 * runs.size() + 9) / 10;
      if (selected(5))
        report(5, "method comparison",
               {static_cast<std::size_t>(n5) >= need5 && total <= 20 * 60,
                std::to_string(n5) + "/" + std::to_string(runs.size()) + " seeds with per-expert >= threshold, " +
                    fmt(total) + " s"});
      if (selected(6))
        report(6, "geo specialization",
               {static_cast<std::size_t>(n6) >= need6,
                std::to_string(n6) + "/" + std::to_string(runs.size()) + " seeds meet accuracy and pruning targets"});
    }
  }

  guarded(7, "k-means oracle", kmeans_oracle);
  guarded(8, "supcon analytic", supcon_analytic);
  guarded(9, "geocell suite", geocell_suite);
  guarded(10, "coverage power law", [] { return coverage_power_law(10000); });
  guarded(11, "checkpoint round trip", [&] { return checkpoint_round_trip(cli); });
  return failures == 0 ? 0 : 1;
}
