#include "geomoe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace geomoe {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_plain(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const fs::path& path, std::size_t line, const char* field) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError(path.string() + ":" + std::to_string(line) + ": bad " + field + " '" + s + "'");
}

double parse_num(const std::string& s, const fs::path& path, std::size_t line, const char* field) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ValidationError(path.string() + ":" + std::to_string(line) + ": bad " + field + " '" + s + "'");
  }
  return v;
}

std::ifstream open_csv(const fs::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string h;
  std::getline(in, h);
  if (!h.empty() && h.back() == '\r') h.pop_back();
  if (h != header) throw ValidationError(path.string() + ": expected header '" + header + "'");
  return in;
}

template <typename T>
int argmax_row(std::span<const T> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

// ---- traces ----

template <typename T>
RouteTrace trace_routes(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx, int cell_level,
                        std::size_t batch) {
  if (!model.is_moe()) throw StateError("tracing needs a model with expert layers");
  NoGradGuard ng;
  const auto P = static_cast<std::size_t>(model.config().num_patches());
  const auto layers = model.moe_layer_indices();
  TrainConfig plain;
  RouteTrace out;
  out.reserve(idx.size() * P * layers.size());
  for (std::size_t s = 0; s < idx.size(); s += batch) {
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<long>(s),
                                         idx.begin() + static_cast<long>(std::min(idx.size(), s + batch)));
    const auto res = model.forward(make_batch<T>(d, chunk, false, plain, nullptr));
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto& r = d.record(chunk[b]);
      const std::string token = cell_from_latlng(r.location, cell_level).token();
      for (int l : layers) {
        const auto& routes = res.routes[static_cast<std::size_t>(l)];
        for (std::size_t p = 0; p < P; ++p) {
          out.push_back({r.id, r.class_id, token, l, static_cast<int>(p), routes[b * P + p]});
        }
      }
    }
  }
  return out;
}

void write_trace_csv(const RouteTrace& t, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "sample_id,class_id,cell_token,layer,patch,expert\n";
  for (const auto& r : t) {
    if (r.sample_id.find(',') != std::string::npos) throw ValidationError("sample id '" + r.sample_id + "' contains a comma");
    out << r.sample_id << ',' << r.class_id << ',' << r.cell_token << ',' << r.layer << ',' << r.patch << ',' << r.expert
        << '\n';
  }
}

RouteTrace read_trace_csv(const fs::path& path) {
  auto in = open_csv(path, "sample_id,class_id,cell_token,layer,patch,expert");
  RouteTrace t;
  std::string line;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_plain(line);
    if (f.size() != 6) throw ValidationError(path.string() + ":" + std::to_string(n) + ": expected 6 fields");
    TraceRow r{f[0], parse_int(f[1], path, n, "class_id"), f[2], parse_int(f[3], path, n, "layer"),
               parse_int(f[4], path, n, "patch"), parse_int(f[5], path, n, "expert")};
    if (r.expert < 0 || r.layer < 0 || r.patch < 0) {
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": negative index");
    }
    t.push_back(std::move(r));
  }
  return t;
}

// ---- routing graph ----

double RoutingGraph::weight(std::size_t pair, int from, int to) const {
  const auto E = static_cast<std::size_t>(num_experts);
  if (totals[pair] == 0) return 0.0;
  return static_cast<double>(counts[pair][static_cast<std::size_t>(from) * E + static_cast<std::size_t>(to)]) /
         static_cast<double>(totals[pair]);
}

std::string RoutingGraph::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&](std::uint64_t v) { h = fnv1a64(&v, sizeof v, h); };
  mix(static_cast<std::uint64_t>(num_experts));
  for (int l : layers) mix(static_cast<std::uint64_t>(l));
  for (const auto& v : visits)
    for (auto c : v) mix(c);
  for (const auto& c : counts)
    for (auto x : c) mix(x);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

RoutingGraph build_routing_graph(const RouteTrace& t, int num_experts) {
  if (t.empty()) throw ValidationError("routing graph needs at least one traced patch");
  std::map<std::pair<std::string, int>, std::map<int, int>> paths;
  int max_e = 0;
  for (const auto& r : t) {
    if (r.expert < 0) throw ValidationError("negative expert index in trace");
    max_e = std::max(max_e, r.expert);
    auto& p = paths[{r.sample_id, r.patch}];
    if (!p.emplace(r.layer, r.expert).second) {
      throw ValidationError("sample '" + r.sample_id + "' patch " + std::to_string(r.patch) + " traced twice at layer " +
                            std::to_string(r.layer));
    }
  }
  RoutingGraph g;
  g.num_experts = num_experts > 0 ? num_experts : max_e + 1;
  if (max_e >= g.num_experts) throw ValidationError("trace expert index exceeds expert count");
  for (const auto& [l, e] : paths.begin()->second) g.layers.push_back(l);
  const auto E = static_cast<std::size_t>(g.num_experts);
  const std::size_t L = g.layers.size();
  g.counts.assign(L > 0 ? L - 1 : 0, std::vector<std::uint64_t>(E * E, 0));
  g.totals.assign(g.counts.size(), 0);
  g.visits.assign(L, std::vector<std::uint64_t>(E, 0));
  for (const auto& [key, route] : paths) {
    if (route.size() != L || !std::equal(g.layers.begin(), g.layers.end(), route.begin(),
                                         [](int l, const auto& kv) { return l == kv.first; })) {
      throw ValidationError("sample '" + key.first + "' patch " + std::to_string(key.second) +
                            " covers a different set of layers");
    }
    std::size_t k = 0;
    int prev = -1;
    for (const auto& [l, e] : route) {
      ++g.visits[k][static_cast<std::size_t>(e)];
      if (k > 0) {
        ++g.counts[k - 1][static_cast<std::size_t>(prev) * E + static_cast<std::size_t>(e)];
        ++g.totals[k - 1];
      }
      prev = e;
      ++k;
    }
  }
  return g;
}

// ---- pruning ----

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile must be in [0,100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

std::vector<double> edge_weights(const RoutingGraph& g, std::optional<std::size_t> pair) {
  std::vector<double> w;
  const auto E = static_cast<std::size_t>(g.num_experts);
  for (std::size_t k = 0; k < g.num_pairs(); ++k) {
    if (pair && *pair != k) continue;
    for (std::size_t i = 0; i < E * E; ++i) {
      if (g.counts[k][i] > 0) w.push_back(static_cast<double>(g.counts[k][i]) / static_cast<double>(g.totals[k]));
    }
  }
  return w;
}

PruneSet threshold_prune(const RoutingGraph& g, double p, bool per_layer) {
  if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile must be in [0,100]");
  PruneSet out;
  out.method = "threshold";
  out.percentile = p;
  if (p == 0.0) return out;
  const auto E = static_cast<std::size_t>(g.num_experts);
  std::vector<double> theta(g.num_pairs(), 0.0);
  if (per_layer) {
    for (std::size_t k = 0; k < g.num_pairs(); ++k) {
      const auto w = edge_weights(g, k);
      theta[k] = w.empty() ? 0.0 : nearest_rank_percentile(w, p);
    }
  } else {
    const auto w = edge_weights(g);
    const double th = w.empty() ? 0.0 : nearest_rank_percentile(w, p);
    std::fill(theta.begin(), theta.end(), th);
  }
  for (std::size_t k = 0; k < g.layers.size(); ++k) {
    for (std::size_t e = 0; e < E; ++e) {
      bool keep = false;
      const auto check = [&](std::size_t pair, std::size_t idx) {
        const auto c = g.counts[pair][idx];
        if (c > 0 && static_cast<double>(c) / static_cast<double>(g.totals[pair]) >= theta[pair]) keep = true;
      };
      if (k + 1 < g.layers.size())
        for (std::size_t j = 0; j < E; ++j) check(k, e * E + j);
      if (k > 0)
        for (std::size_t i = 0; i < E; ++i) check(k - 1, i * E + e);
      if (!keep) out.nodes.insert({g.layers[k], static_cast<int>(e)});
    }
  }
  return out;
}

template <typename T>
std::vector<ExpertNode> expert_nodes(const GeoModel<T>& model) {
  std::vector<ExpertNode> out;
  for (int l : model.moe_layer_indices()) {
    const auto E = model.layers()[static_cast<std::size_t>(l)].moe->num_experts();
    for (std::size_t e = 0; e < E; ++e) out.push_back({l, static_cast<int>(e)});
  }
  return out;
}

namespace {

// Predictions plus the set of nodes any patch was routed to.
template <typename T>
std::pair<EvalResult, AblationSet> evaluate_with_routes(const GeoModel<T>& model, const Dataset& d,
                                                        const std::vector<std::size_t>& idx) {
  NoGradGuard ng;
  AblationSet used;
  TrainConfig plain;
  for (std::size_t s = 0; s < idx.size(); s += 64) {
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<long>(s),
                                         idx.begin() + static_cast<long>(std::min(idx.size(), s + 64)));
    const auto res = model.forward(make_batch<T>(d, chunk, false, plain, nullptr));
    for (int l : model.moe_layer_indices())
      for (int e : res.routes[static_cast<std::size_t>(l)]) used.insert({l, e});
  }
  return {evaluate(model, d, idx), used};
}

}  // namespace

template <typename T>
ImportanceTable per_expert_importance(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ValidationError("per-expert importance needs a non-empty validation set");
  if (!model.is_moe()) throw StateError("per-expert importance needs a model with expert layers");
  const auto [base, used] = evaluate_with_routes(model, d, idx);
  ImportanceTable t;
  t.baseline_acc = base.accuracy;
  for (const auto& node : expert_nodes(model)) {
    double imp = 0.0;
    if (used.count(node)) {
      const AblationSet one{node};
      imp = base.accuracy - evaluate(model, d, idx, &one).accuracy;
    }
    t.entries.push_back({node, imp});
  }
  return t;
}

void write_importance_csv(const ImportanceTable& t, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "layer,expert,importance,baseline_acc\n" << std::setprecision(17);
  for (const auto& e : t.entries) out << e.node.layer << ',' << e.node.expert << ',' << e.importance << ',' << t.baseline_acc << '\n';
}

ImportanceTable read_importance_csv(const fs::path& path) {
  auto in = open_csv(path, "layer,expert,importance,baseline_acc");
  ImportanceTable t;
  std::string line;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_plain(line);
    if (f.size() != 4) throw ValidationError(path.string() + ":" + std::to_string(n) + ": expected 4 fields");
    t.entries.push_back({{parse_int(f[0], path, n, "layer"), parse_int(f[1], path, n, "expert")},
                         parse_num(f[2], path, n, "importance")});
    t.baseline_acc = parse_num(f[3], path, n, "baseline_acc");
  }
  return t;
}

PruneSet per_expert_prune(const ImportanceTable& t, std::size_t count, const RoutingGraph* popularity) {
  if (count > t.entries.size()) {
    throw ValidationError("cannot drop " + std::to_string(count) + " of " + std::to_string(t.entries.size()) + " experts");
  }
  const auto visits = [&](const ExpertNode& n) -> std::uint64_t {
    if (!popularity) return 0;
    const auto it = std::find(popularity->layers.begin(), popularity->layers.end(), n.layer);
    if (it == popularity->layers.end() || n.expert >= popularity->num_experts) return 0;
    return popularity->visits[static_cast<std::size_t>(it - popularity->layers.begin())][static_cast<std::size_t>(n.expert)];
  };
  auto entries = t.entries;
  std::stable_sort(entries.begin(), entries.end(), [&](const ImportanceEntry& a, const ImportanceEntry& b) {
    if (a.importance != b.importance) return a.importance < b.importance;
    const auto va = visits(a.node), vb = visits(b.node);
    if (va != vb) return va < vb;
    return a.node < b.node;
  });
  PruneSet out;
  out.method = "per-expert";
  for (std::size_t i = 0; i < count; ++i) out.nodes.insert(entries[i].node);
  return out;
}

PruneSet random_prune(const std::vector<ExpertNode>& nodes, std::size_t count, std::uint64_t seed) {
  if (count > nodes.size()) throw ValidationError("cannot drop more experts than exist");
  auto v = nodes;
  Rng rng(seed);
  rng.shuffle(v);
  PruneSet out;
  out.method = "random";
  out.nodes.insert(v.begin(), v.begin() + static_cast<long>(count));
  return out;
}

std::vector<std::size_t> location_eval_indices(const DatasetManifest& m, Split split, const std::optional<CellId>& cell) {
  std::vector<std::size_t> idx;
  if (cell) {
    idx = filter_by_location_species(m, split, *cell);
  } else {
    for (std::size_t i = 0; i < m.records.size(); ++i)
      if (m.records[i].split == split) idx.push_back(i);
  }
  if (idx.empty()) {
    throw ValidationError(std::string(split_name(split)) + " set filtered to location " +
                          (cell ? cell->token() : std::string("<global>")) + " is empty");
  }
  return idx;
}

template <typename T>
PrunedEval evaluate_pruned(const GeoModel<T>& model, const AblationSet& prune, const Dataset& d,
                           const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ValidationError("evaluation set is empty");
  PrunedEval r;
  r.baseline = evaluate(model, d, idx);
  r.pruned = prune.empty() ? r.baseline : evaluate(model, d, idx, &prune);
  return r;
}

// ---- affinities ----

namespace {

template <typename T>
std::vector<Tensor<T>> pre_mlp_batches(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                       int layer, std::vector<std::vector<std::size_t>>& chunks) {
  NoGradGuard ng;
  TrainConfig plain;
  std::vector<Tensor<T>> out;
  for (std::size_t s = 0; s < idx.size(); s += 64) {
    chunks.emplace_back(idx.begin() + static_cast<long>(s), idx.begin() + static_cast<long>(std::min(idx.size(), s + 64)));
    ForwardOptions fo;
    fo.hooks = true;
    out.push_back(model.forward(make_batch<T>(d, chunks.back(), false, plain, nullptr), fo)
                      .pre_mlp[static_cast<std::size_t>(layer)]
                      .value());
  }
  return out;
}

void finish_rows(AffinityMatrix& a, const std::vector<std::size_t>& patches) {
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    a.present[k] = patches[k] > 0;
    if (!a.present[k]) continue;
    for (auto& v : a.values[k]) v /= static_cast<double>(patches[k]);
  }
}

}  // namespace

template <typename T>
AffinityMatrix class_expert_affinity(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                     int layer, double t) {
  if (layer < 0 || layer >= model.config().num_layers() || !model.layers()[static_cast<std::size_t>(layer)].moe) {
    throw ConfigError("layer " + std::to_string(layer) + " has no experts");
  }
  auto gate = model.layers()[static_cast<std::size_t>(layer)].moe->gate().clone();
  gate.set_temperature(t);
  const std::size_t K = d.num_classes(), E = gate.num_experts();
  AffinityMatrix a;
  a.row_labels = d.manifest.class_names;
  for (std::size_t e = 0; e < E; ++e) a.col_labels.push_back("expert" + std::to_string(e));
  a.values.assign(K, std::vector<double>(E, 0.0));
  a.present.assign(K, false);
  std::vector<std::size_t> patches(K, 0);
  std::vector<std::vector<std::size_t>> chunks;
  const auto acts = pre_mlp_batches(model, d, idx, layer, chunks);
  for (std::size_t c = 0; c < acts.size(); ++c) {
    const std::size_t rows = acts[c].size() / acts[c].last_dim(), P = rows / chunks[c].size();
    for (std::size_t r = 0; r < rows; ++r) {
      const auto k = static_cast<std::size_t>(d.record(chunks[c][r / P]).class_id);
      const auto pr = gate.probabilities(acts[c].row(r));
      for (std::size_t e = 0; e < E; ++e) a.values[k][e] += static_cast<double>(pr[e]);
      ++patches[k];
    }
  }
  finish_rows(a, patches);
  return a;
}

template <typename T>
AffinityMatrix class_cell_affinity(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                   const std::vector<CellId>& cells, int layer, double t) {
  if (!(t > 0)) throw ValidationError("temperature must be > 0");
  if (layer < 0 || layer >= model.config().num_layers()) throw ConfigError("layer " + std::to_string(layer) + " out of range");
  NoGradGuard ng;
  AffinityMatrix a;
  const std::size_t block = model.config().block_of_layer(layer);
  std::vector<std::vector<double>> proj;
  for (const auto& cell : cells) {
    std::vector<LatLng> locs;
    for (const auto& r : d.manifest.records) {
      if (r.split == Split::train && cell.contains(cell_from_latlng(r.location, CellId::kMaxLevel))) locs.push_back(r.location);
    }
    if (locs.empty()) {
      a.warnings.push_back("cell " + cell.token() + " has no training records; excluded");
      continue;
    }
    const auto emb = model.location_encoder().encode(locs).value();
    const std::size_t De = emb.last_dim();
    Tensor<T> mean_emb({1, De});
    for (std::size_t i = 0; i < locs.size(); ++i)
      for (std::size_t j = 0; j < De; ++j) mean_emb[j] += emb[i * De + j] / static_cast<T>(locs.size());
    Rng unused(0);
    const auto p = model.projectors().project(constant(mean_emb), block, false, unused).value();
    std::vector<double> v(p.size());
    double n = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = static_cast<double>(p[j]);
      n += v[j] * v[j];
    }
    n = std::sqrt(n);
    for (auto& x : v) x = n > 0 ? x / n : 0.0;
    proj.push_back(std::move(v));
    a.col_labels.push_back(cell.token());
  }
  if (proj.empty()) throw ValidationError("no cell has training records");
  const std::size_t K = d.num_classes(), Cn = proj.size();
  a.row_labels = d.manifest.class_names;
  a.values.assign(K, std::vector<double>(Cn, 0.0));
  a.present.assign(K, false);
  std::vector<std::size_t> patches(K, 0);
  std::vector<std::vector<std::size_t>> chunks;
  const auto acts = pre_mlp_batches(model, d, idx, layer, chunks);
  std::vector<double> s(Cn);
  for (std::size_t c = 0; c < acts.size(); ++c) {
    const std::size_t D = acts[c].last_dim(), rows = acts[c].size() / D, P = rows / chunks[c].size();
    for (std::size_t r = 0; r < rows; ++r) {
      const auto k = static_cast<std::size_t>(d.record(chunks[c][r / P]).class_id);
      const auto h = acts[c].row(r);
      double hn = 0;
      for (auto x : h) hn += static_cast<double>(x) * static_cast<double>(x);
      hn = std::sqrt(hn);
      double mx = -1e300;
      for (std::size_t j = 0; j < Cn; ++j) {
        double dotv = 0;
        for (std::size_t q = 0; q < D; ++q) dotv += static_cast<double>(h[q]) * proj[j][q];
        s[j] = (hn > 0 ? dotv / hn : 0.0) / t;
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < Cn; ++j) a.values[k][j] += s[j] / z;
      ++patches[k];
    }
  }
  finish_rows(a, patches);
  return a;
}

void write_affinity_csv(const AffinityMatrix& a, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "row";
  for (const auto& c : a.col_labels) out << ',' << c;
  out << '\n' << std::setprecision(10);
  for (std::size_t r = 0; r < a.values.size(); ++r) {
    out << a.row_labels[r];
    for (double v : a.values[r]) out << ',' << v;
    out << '\n';
  }
}

AffinityMatrix read_affinity_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  AffinityMatrix a;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  auto h = split_plain(line);
  if (h.empty() || h[0] != "row") throw ValidationError(path.string() + ": first column must be 'row'");
  a.col_labels.assign(h.begin() + 1, h.end());
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_plain(line);
    if (f.size() != h.size()) throw ValidationError(path.string() + ":" + std::to_string(n) + ": wrong field count");
    a.row_labels.push_back(f[0]);
    std::vector<double> row;
    for (std::size_t i = 1; i < f.size(); ++i) row.push_back(parse_num(f[i], path, n, "value"));
    a.values.push_back(std::move(row));
    a.present.push_back(true);
  }
  return a;
}

// ---- coverage ----

CoverageStats coverage_density(const std::vector<std::vector<double>>& scores, double threshold, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  CoverageStats c;
  for (const auto& row : scores) {
    if (row.empty()) throw ValidationError("coverage grid is empty");
    std::size_t above = 0;
    for (double s : row) above += s > threshold;
    c.coverage.push_back(static_cast<double>(above) / static_cast<double>(row.size()));
  }
  for (std::size_t b = 0; b <= bins; ++b) c.bin_edges.push_back(static_cast<double>(b) / static_cast<double>(bins));
  c.histogram.assign(bins, 0);
  for (double v : c.coverage) ++c.histogram[std::min(bins - 1, static_cast<std::size_t>(v * static_cast<double>(bins)))];
  if (c.coverage.empty()) return c;
  auto sorted = c.coverage;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  c.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  c.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  const std::size_t top = std::max<std::size_t>(1, (n + 9) / 10);
  c.top_decile_mean = std::accumulate(sorted.end() - static_cast<long>(top), sorted.end(), 0.0) / static_cast<double>(top);
  return c;
}

void write_coverage_csv(const CoverageStats& c, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "bin_lo,bin_hi,count\n" << std::setprecision(10);
  for (std::size_t b = 0; b < c.histogram.size(); ++b) {
    out << c.bin_edges[b] << ',' << c.bin_edges[b + 1] << ',' << c.histogram[b] << '\n';
  }
}

// ---- pruning manifest ----

std::string manifest_to_json(const PruningManifest& m) {
  nlohmann::ordered_json j;
  j["method"] = m.method;
  if (m.percentile) j["percentile"] = *m.percentile;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : m.nodes) j["nodes"].push_back({{"layer", n.layer}, {"expert", n.expert}});
  j["location"] = m.location;
  j["baseline_acc"] = m.baseline_acc;
  j["pruned_acc"] = m.pruned_acc;
  j["graph_hash"] = m.graph_hash;
  return j.dump(2);
}

PruningManifest manifest_from_json(const std::string& text) {
  PruningManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.method = j.at("method").get<std::string>();
    if (j.contains("percentile") && !j["percentile"].is_null()) m.percentile = j["percentile"].get<double>();
    for (const auto& n : j.at("nodes")) m.nodes.push_back({n.at("layer").get<int>(), n.at("expert").get<int>()});
    m.location = j.value("location", std::string());
    m.baseline_acc = j.value("baseline_acc", 0.0);
    m.pruned_acc = j.value("pruned_acc", 0.0);
    m.graph_hash = j.value("graph_hash", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("pruning manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const PruningManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << manifest_to_json(m) << '\n';
}

PruningManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

#define GEOMOE_INSTANTIATE_ANALYSIS(T)                                                                                \
  template RouteTrace trace_routes(const GeoModel<T>&, const Dataset&, const std::vector<std::size_t>&, int,         \
                                   std::size_t);                                                                      \
  template std::vector<ExpertNode> expert_nodes(const GeoModel<T>&);                                                  \
  template ImportanceTable per_expert_importance(const GeoModel<T>&, const Dataset&, const std::vector<std::size_t>&); \
  template PrunedEval evaluate_pruned(const GeoModel<T>&, const AblationSet&, const Dataset&,                         \
                                      const std::vector<std::size_t>&);                                               \
  template AffinityMatrix class_expert_affinity(const GeoModel<T>&, const Dataset&, const std::vector<std::size_t>&, \
                                                int, double);                                                         \
  template AffinityMatrix class_cell_affinity(const GeoModel<T>&, const Dataset&, const std::vector<std::size_t>&,   \
                                              const std::vector<CellId>&, int, double);

GEOMOE_INSTANTIATE_ANALYSIS(float)
GEOMOE_INSTANTIATE_ANALYSIS(double)

}  // namespace geomoe
