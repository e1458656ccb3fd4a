#include "geomoe/moe_build.hpp"

#include "geomoe/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

namespace geomoe {

namespace {

void require_expert_layer(const ModelConfig& cfg, int layer) {
  if (std::find(cfg.expert_layers.begin(), cfg.expert_layers.end(), layer) == cfg.expert_layers.end()) {
    throw ConfigError("layer " + std::to_string(layer) + " is not an expert layer");
  }
}

double sqdist(const double* a, const double* b, std::size_t D) {
  double s = 0;
  for (std::size_t d = 0; d < D; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return s;
}

}  // namespace

template <typename T>
ActivationCache collect_activation_cache(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                         const std::vector<int>& layers, std::size_t batch) {
  for (int l : layers) require_expert_layer(model.config(), l);
  if (idx.empty()) throw ValidationError("no records to collect activations from");
  NoGradGuard ng;
  const auto P = static_cast<std::size_t>(model.config().num_patches());
  ActivationCache cache;
  for (int l : layers) {
    const auto D = static_cast<std::size_t>(model.config().blocks[model.config().block_of_layer(l)].dim);
    cache[l] = Tensor<double>({idx.size() * P, D});
  }
  TrainConfig plain;
  for (std::size_t s = 0; s < idx.size(); s += batch) {
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<long>(s),
                                         idx.begin() + static_cast<long>(std::min(idx.size(), s + batch)));
    ForwardOptions fo;
    fo.hooks = true;
    const auto res = model.forward(make_batch<T>(d, chunk, false, plain, nullptr), fo);
    for (int l : layers) {
      const auto& h = res.pre_mlp[static_cast<std::size_t>(l)].value();
      auto& dst = cache[l];
      const std::size_t off = s * P * h.last_dim();
      for (std::size_t i = 0; i < h.size(); ++i) dst[off + i] = static_cast<double>(h[i]);
    }
  }
  return cache;
}

template <typename T>
Tensor<double> collect_activations(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                                   int layer, std::size_t batch) {
  return std::move(collect_activation_cache(model, d, idx, {layer}, batch).at(layer));
}

std::vector<std::size_t> balanced_resample(const DatasetManifest& m, const std::vector<std::size_t>& idx, int min_count,
                                           Rng& rng) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  if (idx.empty()) throw ValidationError("balanced_resample: no records");
  std::map<int, std::vector<std::size_t>> by_class;
  for (auto i : idx) by_class[m.records.at(i).class_id].push_back(i);
  std::vector<std::size_t> out = idx;
  for (const auto& [cls, members] : by_class) {
    for (auto n = members.size(); n < static_cast<std::size_t>(min_count); ++n) {
      out.push_back(members[rng.uniform_int(members.size())]);
    }
  }
  return out;
}

KMeansResult kmeans(const Tensor<double>& points, int num_clusters, int refine_iters, std::uint64_t seed) {
  if (points.rank() != 2) throw DimensionError("kmeans points must be [N, D]");
  const std::size_t N = points.dim(0), D = points.dim(1);
  if (num_clusters < 1) throw ConfigError("kmeans needs at least one cluster");
  const auto E = static_cast<std::size_t>(num_clusters);
  if (E > N) throw ValidationError("kmeans: " + std::to_string(E) + " clusters for " + std::to_string(N) + " points");
  if (refine_iters < 0) throw ConfigError("refine_iters must be >= 0");

  Rng rng(seed);
  KMeansResult r;
  r.centroids = Tensor<double>({E, D});
  const double* X = points.data();
  double* C = r.centroids.data();

  // k-means++ seeding.
  std::vector<double> d2(N, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.uniform_int(N);
  for (std::size_t e = 0; e < E; ++e) {
    std::copy(X + pick * D, X + (pick + 1) * D, C + e * D);
    double total = 0;
    for (std::size_t i = 0; i < N; ++i) {
      d2[i] = std::min(d2[i], sqdist(X + i * D, C + e * D, D));
      total += d2[i];
    }
    if (e + 1 == E) break;
    if (total <= 0) {
      // All points coincide with a centroid; take the first unused index.
      pick = (pick + 1) % N;
      continue;
    }
    double u = rng.uniform() * total;
    pick = N - 1;
    for (std::size_t i = 0; i < N; ++i) {
      if (d2[i] <= 0) continue;
      u -= d2[i];
      if (u < 0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<int>& a = r.assignments;
  a.assign(N, 0);
  std::vector<double> dist(N);
  const auto assign = [&]() {
    double inertia = 0;
    bool changed = false;
    for (std::size_t i = 0; i < N; ++i) {
      int best = 0;
      double bd = sqdist(X + i * D, C, D);
      for (std::size_t e = 1; e < E; ++e) {
        const double dd = sqdist(X + i * D, C + e * D, D);
        if (dd < bd) {
          bd = dd;
          best = static_cast<int>(e);
        }
      }
      changed = changed || a[i] != best;
      a[i] = best;
      dist[i] = bd;
      inertia += bd;
    }
    return std::make_pair(inertia, changed);
  };

  r.inertia = assign().first;
  r.history.push_back(r.inertia);
  for (int it = 0; it < refine_iters; ++it) {
    std::vector<double> sums(E * D, 0.0);
    std::vector<std::size_t> counts(E, 0);
    for (std::size_t i = 0; i < N; ++i) {
      const auto e = static_cast<std::size_t>(a[i]);
      ++counts[e];
      for (std::size_t d = 0; d < D; ++d) sums[e * D + d] += X[i * D + d];
    }
    for (std::size_t e = 0; e < E; ++e) {
      if (counts[e] == 0) continue;
      for (std::size_t d = 0; d < D; ++d) C[e * D + d] = sums[e * D + d] / static_cast<double>(counts[e]);
    }
    for (std::size_t e = 0; e < E; ++e) {
      if (counts[e] != 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < N; ++i)
        if (dist[i] > dist[far]) far = i;
      std::copy(X + far * D, X + (far + 1) * D, C + e * D);
      dist[far] = 0;
    }
    const auto [inertia, changed] = assign();
    r.inertia = inertia;
    r.history.push_back(inertia);
    r.iterations = it + 1;
    if (!changed) break;
  }
  return r;
}

template <typename T>
ExpertGate<T> init_gate(const std::string& name, const Tensor<double>& centroids, int rank, double temperature) {
  if (centroids.rank() != 2) throw DimensionError("centroids must be [E, D]");
  const std::size_t E = centroids.dim(0), D = centroids.dim(1);
  const auto full = static_cast<int>(std::min(E, D));
  if (rank < 0 || rank > full) {
    throw ConfigError("gate rank " + std::to_string(rank) + " outside 1.." + std::to_string(full));
  }
  Eigen::MatrixXd C(static_cast<Eigen::Index>(E), static_cast<Eigen::Index>(D));
  for (std::size_t e = 0; e < E; ++e) {
    double n = 0;
    for (std::size_t d = 0; d < D; ++d) n += centroids[e * D + d] * centroids[e * D + d];
    n = std::sqrt(n);
    for (std::size_t d = 0; d < D; ++d) {
      C(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(d)) = n > 0 ? centroids[e * D + d] / n : 0.0;
    }
  }
  if (rank == 0) {
    Tensor<T> c({E, D});
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t d = 0; d < D; ++d) c[e * D + d] = static_cast<T>(C(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(d)));
    return ExpertGate<T>(name, c, temperature);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto r = static_cast<std::size_t>(rank);
  Tensor<T> u({E, r}), v({r, D});
  for (std::size_t k = 0; k < r; ++k) {
    const double sk = svd.singularValues()(static_cast<Eigen::Index>(k));
    for (std::size_t e = 0; e < E; ++e) {
      u[e * r + k] = static_cast<T>(svd.matrixU()(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(k)) * sk);
    }
    for (std::size_t d = 0; d < D; ++d) {
      v[k * D + d] = static_cast<T>(svd.matrixV()(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)));
    }
  }
  return ExpertGate<T>(name, std::move(u), std::move(v), temperature);
}

template <typename T>
MoEStructure moe_structure(const GeoModel<T>& model) {
  MoEStructure s;
  s.layers = model.moe_layer_indices();
  if (s.layers.empty()) return s;
  const auto& moe = *model.layers()[static_cast<std::size_t>(s.layers[0])].moe;
  s.num_experts = static_cast<int>(moe.num_experts());
  s.hidden = static_cast<int>(moe.experts()[0].hidden());
  s.rank = moe.gate().factorized() ? static_cast<int>(moe.gate().rank()) : 0;
  s.temperature = moe.gate().temperature();
  bool frozen = false;
  const_cast<ExpertGate<T>&>(moe.gate()).visit([&](Parameter<T>& p) { frozen = frozen || p.frozen(); });
  s.gate_trainable = !frozen;
  return s;
}

namespace {

template <typename T>
void set_gate_frozen(ExpertGate<T>& g, bool frozen) {
  g.visit([&](Parameter<T>& p) { p.set_frozen(frozen); });
}

}  // namespace

template <typename T>
void install_placeholder_moe(GeoModel<T>& model, const MoEStructure& s) {
  if (s.layers.empty()) return;
  if (s.num_experts < 2 || s.hidden < 1) throw ConfigError("expert structure needs >= 2 experts and hidden >= 1");
  Rng rng(0);
  for (int l : s.layers) {
    if (l < 0 || l >= model.config().num_layers()) throw ConfigError("expert layer " + std::to_string(l) + " out of range");
    const auto D = static_cast<std::size_t>(model.config().blocks[model.config().block_of_layer(l)].dim);
    const auto E = static_cast<std::size_t>(s.num_experts);
    const std::string name = "layer" + std::to_string(l) + ".moe";
    ExpertGate<T> gate;
    if (s.rank > 0) {
      const auto r = static_cast<std::size_t>(s.rank);
      Tensor<T> u({E, r}), v({r, D});
      for (std::size_t e = 0; e < std::min(E, r); ++e) u[e * r + e] = T(1);
      for (std::size_t k = 0; k < std::min(r, D); ++k) v[k * D + k] = T(1);
      gate = ExpertGate<T>(name + ".gate", std::move(u), std::move(v), s.temperature);
    } else {
      gate = ExpertGate<T>(name + ".gate", Tensor<T>({E, D}, T(1)), s.temperature);
    }
    set_gate_frozen(gate, !s.gate_trainable);
    std::vector<ExpertMLP<T>> experts;
    for (std::size_t e = 0; e < E; ++e) {
      experts.emplace_back(name + ".expert" + std::to_string(e), D, static_cast<std::size_t>(s.hidden), rng);
    }
    model.install_moe(l, MoELayer<T>(std::move(gate), std::move(experts)));
  }
}

template <typename T>
GeoModel<T> convert_to_moe(const GeoModel<T>& dense, const ActivationCache& cache, const MoEConfig& cfg,
                           const std::vector<int>& layers, std::uint64_t seed) {
  if (cfg.num_experts < 2) throw ConfigError("num_experts must be >= 2");
  if (cfg.hidden < 1) throw ConfigError("expert hidden width must be >= 1");
  GeoModel<T> out = dense.clone();
  for (int l : layers) {
    require_expert_layer(dense.config(), l);
    if (dense.layers()[static_cast<std::size_t>(l)].moe) throw StateError("layer " + std::to_string(l) + " is already converted");
    auto it = cache.find(l);
    if (it == cache.end()) throw StateError("no activations collected for layer " + std::to_string(l));
    const auto& acts = it->second;
    const auto D = static_cast<std::size_t>(dense.config().blocks[dense.config().block_of_layer(l)].dim);
    if (acts.rank() != 2 || acts.dim(1) != D) throw DimensionError("activation cache for layer " + std::to_string(l) + " has wrong width");

    const auto km = kmeans(acts, cfg.num_experts, cfg.refine_iters, Rng::derive(seed, static_cast<std::uint64_t>(l)));
    const int full = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.num_experts), D));
    const int rank = cfg.gate_rank <= 0 ? 0 : std::min(cfg.gate_rank, full);
    const std::string name = "layer" + std::to_string(l) + ".moe";
    auto gate = init_gate<T>(name + ".gate", km.centroids, rank, cfg.temperature);
    set_gate_frozen(gate, !cfg.gate_trainable);

    Rng rng(Rng::derive(seed, 0x1000 + static_cast<std::uint64_t>(l)));
    std::vector<ExpertMLP<T>> experts;
    for (int e = 0; e < cfg.num_experts; ++e) {
      experts.emplace_back(name + ".expert" + std::to_string(e), D, static_cast<std::size_t>(cfg.hidden), rng);
    }
    out.install_moe(l, MoELayer<T>(std::move(gate), std::move(experts)));
  }
  return out;
}

template <typename T>
long long expected_parameter_delta(const GeoModel<T>& dense, const MoEConfig& cfg, const std::vector<int>& layers) {
  long long delta = 0;
  const long long E = cfg.num_experts, N = cfg.hidden;
  for (int l : layers) {
    const long long D = dense.config().blocks[dense.config().block_of_layer(l)].dim;
    const long long full = std::min(E, D);
    const long long r = cfg.gate_rank <= 0 ? 0 : std::min<long long>(cfg.gate_rank, full);
    const long long gate = r == 0 ? E * D : E * r + r * D;
    delta += E * (2 * D * N + N + D) + gate - static_cast<long long>(dense.dense_mlp_parameter_count(l));
  }
  return delta;
}

#define GEOMOE_INSTANTIATE_MOE_BUILD(T)                                                                              \
  template Tensor<double> collect_activations(const GeoModel<T>&, const Dataset&, const std::vector<std::size_t>&, \
                                              int, std::size_t);                                                   \
  template ActivationCache collect_activation_cache(const GeoModel<T>&, const Dataset&,                             \
                                                    const std::vector<std::size_t>&, const std::vector<int>&,      \
                                                    std::size_t);                                                  \
  template ExpertGate<T> init_gate(const std::string&, const Tensor<double>&, int, double);                        \
  template MoEStructure moe_structure(const GeoModel<T>&);                                                          \
  template void install_placeholder_moe(GeoModel<T>&, const MoEStructure&);                                         \
  template GeoModel<T> convert_to_moe(const GeoModel<T>&, const ActivationCache&, const MoEConfig&,                 \
                                      const std::vector<int>&, std::uint64_t);                                      \
  template long long expected_parameter_delta(const GeoModel<T>&, const MoEConfig&, const std::vector<int>&);

GEOMOE_INSTANTIATE_MOE_BUILD(float)
GEOMOE_INSTANTIATE_MOE_BUILD(double)

}  // namespace geomoe
