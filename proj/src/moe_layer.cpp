#include "geomoe/moe_layer.hpp"

#include <cmath>

namespace geomoe {

template <typename T>
ExpertGate<T>::ExpertGate(const std::string& name, const Tensor<T>& centroids, double temperature)
    : factorized_(false), temperature_(temperature) {
  if (centroids.rank() != 2) throw DimensionError("gate centroids must be [E, D], got " + shape_str(centroids.shape()));
  Tensor<T> c = centroids;
  for (std::size_t r = 0; r < c.rows(); ++r) {
    auto row = c.row(r);
    const T n = norm2<T>(row);
    if (n > T(0)) {
      for (auto& v : row) v /= n;
    }
  }
  c_ = Parameter<T>(name + ".centroids", ParamGroup::backbone, std::move(c));
  set_temperature(temperature);
  refresh();
}

template <typename T>
ExpertGate<T>::ExpertGate(const std::string& name, Tensor<T> u, Tensor<T> v, double temperature)
    : factorized_(true), temperature_(temperature) {
  if (u.rank() != 2 || v.rank() != 2 || u.dim(1) != v.dim(0)) {
    throw DimensionError("gate factors " + shape_str(u.shape()) + " x " + shape_str(v.shape()) + " do not chain");
  }
  u_ = Parameter<T>(name + ".u", ParamGroup::backbone, std::move(u));
  v_ = Parameter<T>(name + ".v", ParamGroup::backbone, std::move(v));
  set_temperature(temperature);
  refresh();
}

template <typename T>
void ExpertGate<T>::set_temperature(double t) {
  if (!(t > 0.0)) throw ConfigError("gate temperature must be > 0");
  temperature_ = t;
}

template <typename T>
std::size_t ExpertGate<T>::num_experts() const {
  return factorized_ ? u_.value().dim(0) : c_.value().dim(0);
}

template <typename T>
std::size_t ExpertGate<T>::dim() const {
  return factorized_ ? v_.value().dim(1) : c_.value().dim(1);
}

template <typename T>
std::size_t ExpertGate<T>::rank() const {
  return factorized_ ? u_.value().dim(1) : std::min(num_experts(), dim());
}

template <typename T>
std::size_t ExpertGate<T>::parameter_count() const {
  return factorized_ ? u_.value().size() + v_.value().size() : c_.value().size();
}

template <typename T>
Tensor<T> ExpertGate<T>::effective_matrix() const {
  if (!factorized_) return c_.value();
  const auto& U = u_.value();
  const auto& V = v_.value();
  const std::size_t E = U.dim(0), r = U.dim(1), D = V.dim(1);
  Tensor<T> m({E, D});
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t k = 0; k < r; ++k) {
      const T a = U[e * r + k];
      for (std::size_t d = 0; d < D; ++d) m[e * D + d] += a * V[k * D + d];
    }
  return m;
}

template <typename T>
void ExpertGate<T>::refresh() {
  unit_rows_ = effective_matrix();
  for (std::size_t r = 0; r < unit_rows_.rows(); ++r) {
    auto row = unit_rows_.row(r);
    const T n = norm2<T>(row);
    if (n > T(0)) {
      for (auto& v : row) v /= n;
    }
  }
}

template <typename T>
std::vector<T> ExpertGate<T>::cosine_scores(std::span<const T> patch) const {
  if (patch.size() != dim()) throw DimensionError("gate: patch dim " + std::to_string(patch.size()) + " != " + std::to_string(dim()));
  const T pn = norm2<T>(patch);
  std::vector<T> s(num_experts(), T(0));
  if (pn == T(0)) return s;
  for (std::size_t e = 0; e < s.size(); ++e) s[e] = dot<T>(patch, unit_rows_.row(e)) / pn;
  return s;
}

template <typename T>
std::vector<T> ExpertGate<T>::probabilities(std::span<const T> patch) const {
  auto s = cosine_scores(patch);
  softmax_row_inplace<T>(s, static_cast<T>(temperature_));
  return s;
}

template <typename T>
int ExpertGate<T>::route(std::span<const T> patch) const {
  const std::size_t E = num_experts();
  int best = 0;
  T best_v = dot<T>(patch, unit_rows_.row(0));
  for (std::size_t e = 1; e < E; ++e) {
    const T v = dot<T>(patch, unit_rows_.row(e));
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(e);
    }
  }
  return best;
}

template <typename T>
void ExpertGate<T>::visit(const ParamVisitor<T>& f) {
  if (factorized_) {
    f(u_);
    f(v_);
  } else {
    f(c_);
  }
}

template <typename T>
ExpertGate<T> ExpertGate<T>::clone() const {
  ExpertGate g;
  g.factorized_ = factorized_;
  if (factorized_) {
    g.u_ = u_.clone();
    g.v_ = v_.clone();
  } else {
    g.c_ = c_.clone();
  }
  g.temperature_ = temperature_;
  g.unit_rows_ = unit_rows_;
  return g;
}

template <typename T>
ExpertMLP<T>::ExpertMLP(const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng)
    : fc1(name + ".fc1", ParamGroup::experts, dim, hidden, rng),
      fc2(name + ".fc2", ParamGroup::experts, hidden, dim, rng) {
  // Both layers draw N(0, 1/D) weights.
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& v : fc2.weight.mutable_value().vec()) v = static_cast<T>(rng.normal() * sd);
}

template <typename T>
MoELayer<T>::MoELayer(ExpertGate<T> gate, std::vector<ExpertMLP<T>> experts)
    : gate_(std::move(gate)), experts_(std::move(experts)) {
  if (experts_.size() < 2) throw ConfigError("an MoE layer needs at least 2 experts");
  if (gate_.num_experts() != experts_.size()) {
    throw ConfigError("gate routes to " + std::to_string(gate_.num_experts()) + " experts but layer has " +
                      std::to_string(experts_.size()));
  }
  for (const auto& e : experts_) {
    if (e.dim() != gate_.dim()) throw DimensionError("expert dim does not match gate dim");
  }
}

template <typename T>
void MoELayer<T>::set_ablated(std::set<int> a) {
  for (int e : a) {
    if (e < 0 || static_cast<std::size_t>(e) >= experts_.size()) {
      throw ValidationError("ablated expert " + std::to_string(e) + " out of range");
    }
  }
  ablated_ = std::move(a);
}

template <typename T>
std::size_t MoELayer<T>::parameter_count() const {
  std::size_t n = gate_.parameter_count();
  for (const auto& e : experts_) n += e.parameter_count();
  return n;
}

template <typename T>
Var<T> MoELayer<T>::forward(const Var<T>& f, std::vector<int>* routes_out, const std::set<int>* extra_ablated) const {
  const auto& fv = f.value();
  const std::size_t D = gate_.dim();
  if (fv.last_dim() != D) throw DimensionError("MoE input " + shape_str(fv.shape()) + " vs gate dim " + std::to_string(D));
  const std::size_t rows = fv.rows();
  const std::size_t E = experts_.size();

  std::vector<int> routes(rows);
  std::vector<char> dead(E, 0);
  for (int e : ablated_) dead[static_cast<std::size_t>(e)] = 1;
  if (extra_ablated) {
    for (int e : *extra_ablated) {
      if (e >= 0 && static_cast<std::size_t>(e) < E) dead[static_cast<std::size_t>(e)] = 1;
    }
  }

  Tensor<T> out(fv.shape());
  // Hidden activations per row, kept for the backward pass.
  std::vector<std::vector<T>> hidden(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto x = fv.row(r);
    const int e = gate_.route(x);
    routes[r] = e;
    auto y = out.row(r);
    if (dead[static_cast<std::size_t>(e)]) {
      for (std::size_t d = 0; d < D; ++d) y[d] = x[d] + (-x[d]);
      continue;
    }
    const auto& ex = experts_[static_cast<std::size_t>(e)];
    const std::size_t N = ex.hidden();
    const T* W1 = ex.fc1.weight.value().data();
    const T* b1 = ex.fc1.bias.value().data();
    const T* W2 = ex.fc2.weight.value().data();
    const T* b2 = ex.fc2.bias.value().data();
    auto& h = hidden[r];
    h.assign(b1, b1 + N);
    for (std::size_t k = 0; k < D; ++k) {
      const T xv = x[k];
      for (std::size_t j = 0; j < N; ++j) h[j] += xv * W1[k * N + j];
    }
    for (auto& v : h) v = v > T(0) ? v : T(0);
    for (std::size_t d = 0; d < D; ++d) y[d] = b2[d];
    for (std::size_t j = 0; j < N; ++j) {
      const T hv = h[j];
      if (hv == T(0)) continue;
      for (std::size_t d = 0; d < D; ++d) y[d] += hv * W2[j * D + d];
    }
    for (std::size_t d = 0; d < D; ++d) y[d] = x[d] + y[d];
  }
  if (routes_out) *routes_out = routes;

  std::vector<Var<T>> inputs{f};
  for (const auto& ex : experts_) {
    inputs.push_back(ex.fc1.weight.var());
    inputs.push_back(ex.fc1.bias.var());
    inputs.push_back(ex.fc2.weight.var());
    inputs.push_back(ex.fc2.bias.var());
  }
  return Var<T>::make(
      std::move(out), std::move(inputs),
      [rows, D, routes = std::move(routes), dead = std::move(dead), hidden = std::move(hidden)](Node<T>& n) {
        const T* G = n.grad.data();
        const T* X = n.parents[0]->value.data();
        const bool gx = n.parents[0]->requires_grad;
        T* dX = gx ? n.parents[0]->grad_buffer().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = G + r * D;
          const auto e = static_cast<std::size_t>(routes[r]);
          if (dead[e]) {
            // d(x + (-x))/dx = 0
            continue;
          }
          if (gx) {
            for (std::size_t d = 0; d < D; ++d) dX[r * D + d] += g[d];
          }
          const std::size_t base = 1 + 4 * e;
          auto& W1n = *n.parents[base];
          auto& b1n = *n.parents[base + 1];
          auto& W2n = *n.parents[base + 2];
          auto& b2n = *n.parents[base + 3];
          const auto& h = hidden[r];
          const std::size_t N = h.size();
          const T* W1 = W1n.value.data();
          const T* W2 = W2n.value.data();
          if (b2n.requires_grad) {
            T* db2 = b2n.grad_buffer().data();
            for (std::size_t d = 0; d < D; ++d) db2[d] += g[d];
          }
          if (W2n.requires_grad) {
            T* dW2 = W2n.grad_buffer().data();
            for (std::size_t j = 0; j < N; ++j) {
              if (h[j] == T(0)) continue;
              for (std::size_t d = 0; d < D; ++d) dW2[j * D + d] += h[j] * g[d];
            }
          }
          std::vector<T> dh(N, T(0));
          for (std::size_t j = 0; j < N; ++j) {
            if (h[j] <= T(0)) continue;
            T acc = 0;
            for (std::size_t d = 0; d < D; ++d) acc += g[d] * W2[j * D + d];
            dh[j] = acc;
          }
          if (b1n.requires_grad) {
            T* db1 = b1n.grad_buffer().data();
            for (std::size_t j = 0; j < N; ++j) db1[j] += dh[j];
          }
          if (W1n.requires_grad) {
            T* dW1 = W1n.grad_buffer().data();
            for (std::size_t k = 0; k < D; ++k) {
              const T xv = X[r * D + k];
              for (std::size_t j = 0; j < N; ++j) dW1[k * N + j] += xv * dh[j];
            }
          }
          if (gx) {
            for (std::size_t k = 0; k < D; ++k) {
              T acc = 0;
              for (std::size_t j = 0; j < N; ++j) acc += dh[j] * W1[k * N + j];
              dX[r * D + k] += acc;
            }
          }
        }
      });
}

template <typename T>
void MoELayer<T>::visit(const ParamVisitor<T>& f) {
  gate_.visit(f);
  for (auto& e : experts_) e.visit(f);
}

template <typename T>
MoELayer<T> MoELayer<T>::clone() const {
  MoELayer m;
  m.gate_ = gate_.clone();
  for (const auto& e : experts_) m.experts_.push_back(e.clone());
  m.ablated_ = ablated_;
  return m;
}

template class ExpertGate<float>;
template class ExpertGate<double>;
template struct ExpertMLP<float>;
template struct ExpertMLP<double>;
template class MoELayer<float>;
template class MoELayer<double>;

}  // namespace geomoe
