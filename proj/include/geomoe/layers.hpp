#pragma once

#include <functional>
#include <string>
#include <vector>

#include "geomoe/ops.hpp"

namespace geomoe {

template <typename T>
using ParamVisitor = std::function<void(Parameter<T>&)>;

// Weights drawn N(0, 1/fan_in); biases zero.
template <typename T>
Tensor<T> init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0) {
  Tensor<T> w({fan_in, fan_out});
  const double sd = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.vec()) v = static_cast<T>(rng.normal() * sd);
  return w;
}

template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& name, ParamGroup group, std::size_t din, std::size_t dout, Rng& rng, double gain = 1.0)
      : weight(name + ".weight", group, init_weight<T>(din, dout, rng, gain)),
        bias(name + ".bias", group, Tensor<T>({dout})) {}

  std::size_t in_dim() const { return weight.value().dim(0); }
  std::size_t out_dim() const { return weight.value().dim(1); }

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight.var(), bias.var()); }

  void visit(const ParamVisitor<T>& f) {
    f(weight);
    f(bias);
  }
  Linear clone() const { return Linear{weight.clone(), bias.clone()}; }
  Linear(Parameter<T> w, Parameter<T> b) : weight(std::move(w)), bias(std::move(b)) {}
};

template <typename T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(const std::string& name, ParamGroup group, std::size_t dim)
      : gamma(name + ".gamma", group, Tensor<T>({dim}, T(1))), beta(name + ".beta", group, Tensor<T>({dim})) {}

  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma.var(), beta.var(), eps); }

  void visit(const ParamVisitor<T>& f) {
    f(gamma);
    f(beta);
  }
  LayerNorm clone() const {
    LayerNorm n;
    n.gamma = gamma.clone();
    n.beta = beta.clone();
    n.eps = eps;
    return n;
  }
};

// Multi-head self attention: query/key/value projections, attention, output
// projection. No positional term, so it is permutation-equivariant over patches.
template <typename T>
struct Mhsa {
  std::size_t heads = 1;
  Linear<T> q, k, v, o;

  Mhsa() = default;
  Mhsa(const std::string& name, ParamGroup group, std::size_t dim, std::size_t num_heads, Rng& rng)
      : heads(num_heads),
        q(name + ".q", group, dim, dim, rng),
        k(name + ".k", group, dim, dim, rng),
        v(name + ".v", group, dim, dim, rng),
        o(name + ".o", group, dim, dim, rng) {
    if (num_heads == 0 || dim % num_heads != 0) {
      throw ConfigError("mhsa: dim " + std::to_string(dim) + " not divisible by " + std::to_string(num_heads) +
                        " heads");
    }
  }

  Var<T> operator()(const Var<T>& x) const { return o(attention(q(x), k(x), v(x), heads)); }

  void visit(const ParamVisitor<T>& f) {
    q.visit(f);
    k.visit(f);
    v.visit(f);
    o.visit(f);
  }
  Mhsa clone() const {
    Mhsa m;
    m.heads = heads;
    m.q = q.clone();
    m.k = k.clone();
    m.v = v.clone();
    m.o = o.clone();
    return m;
  }
};

}  // namespace geomoe
