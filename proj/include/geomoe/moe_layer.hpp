#pragma once

#include <set>
#include <vector>

#include "geomoe/layers.hpp"

namespace geomoe {

// One expert in one MoE layer; layer is the global transformer layer index.
struct ExpertNode {
  int layer = 0;
  int expert = 0;
  friend auto operator<=>(const ExpertNode&, const ExpertNode&) = default;
};

using AblationSet = std::set<ExpertNode>;

inline constexpr double kGateTemperature = 0.001;
inline constexpr int kDefaultGateRank = 8;

// Cosine router. Either a full centroid matrix C [E, D] or a rank-r factor pair
// U [E, r], V [r, D] whose product is the effective matrix.
template <typename T>
class ExpertGate {
 public:
  ExpertGate() = default;
  // Unfactorized gate; rows are L2-normalized.
  ExpertGate(const std::string& name, const Tensor<T>& centroids, double temperature = kGateTemperature);
  // Factorized gate U V.
  ExpertGate(const std::string& name, Tensor<T> u, Tensor<T> v, double temperature = kGateTemperature);

  std::size_t num_experts() const;
  std::size_t dim() const;
  bool factorized() const { return factorized_; }
  std::size_t rank() const;
  double temperature() const { return temperature_; }
  void set_temperature(double t);

  Tensor<T> effective_matrix() const;
  std::size_t parameter_count() const;

  // Row-normalized effective matrix; call refresh() after editing weights.
  void refresh();

  std::vector<T> cosine_scores(std::span<const T> patch) const;
  std::vector<T> probabilities(std::span<const T> patch) const;
  // argmax cosine, lowest index on ties.
  int route(std::span<const T> patch) const;

  void visit(const ParamVisitor<T>& f);
  ExpertGate clone() const;

 private:
  bool factorized_ = false;
  Parameter<T> c_;
  Parameter<T> u_;
  Parameter<T> v_;
  double temperature_ = kGateTemperature;
  Tensor<T> unit_rows_;
};

// D -> N -> D ReLU perceptron.
template <typename T>
struct ExpertMLP {
  Linear<T> fc1;
  Linear<T> fc2;

  ExpertMLP() = default;
  ExpertMLP(const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng);

  std::size_t dim() const { return fc1.in_dim(); }
  std::size_t hidden() const { return fc1.out_dim(); }
  std::size_t parameter_count() const { return 2 * dim() * hidden() + hidden() + dim(); }

  void visit(const ParamVisitor<T>& f) {
    fc1.visit(f);
    fc2.visit(f);
  }
  ExpertMLP clone() const {
    ExpertMLP e;
    e.fc1 = fc1.clone();
    e.fc2 = fc2.clone();
    return e;
  }
};

template <typename T>
class MoELayer {
 public:
  MoELayer() = default;
  MoELayer(ExpertGate<T> gate, std::vector<ExpertMLP<T>> experts);

  std::size_t num_experts() const { return experts_.size(); }
  const ExpertGate<T>& gate() const { return gate_; }
  ExpertGate<T>& gate() { return gate_; }
  const std::vector<ExpertMLP<T>>& experts() const { return experts_; }
  std::vector<ExpertMLP<T>>& experts() { return experts_; }

  const std::set<int>& ablated() const { return ablated_; }
  void set_ablated(std::set<int> a);

  // out = F + Expert_e(F) with e the top-1 route of each patch. An ablated expert
  // outputs -F, which zeroes the patch. routes (if non-null) receives one index
  // per row of F. extra_ablated is merged with the layer's own set.
  Var<T> forward(const Var<T>& f, std::vector<int>* routes, const std::set<int>* extra_ablated = nullptr) const;

  std::size_t parameter_count() const;
  void visit(const ParamVisitor<T>& f);
  MoELayer clone() const;

 private:
  ExpertGate<T> gate_;
  std::vector<ExpertMLP<T>> experts_;
  std::set<int> ablated_;
};

}  // namespace geomoe
