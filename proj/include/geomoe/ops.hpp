#pragma once

#include <cstdint>
#include <vector>

#include "geomoe/autograd.hpp"
#include "geomoe/rng.hpp"

namespace geomoe {

// Closed op vocabulary with exact reverse-mode gradients. Ops act on the last
// axis and treat all leading axes as rows; there is no general broadcasting.

template <typename T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

// [B, P, D] -> [B, D], averaging over P.
template <typename T> Var<T> mean_over_patches(const Var<T>& x);

// x [B, P, D] + table [P, D] for every batch item.
template <typename T> Var<T> add_per_patch(const Var<T>& x, const Var<T>& table);

// Stack rows of a [N, D] and b [M, D] into [N + M, D].
template <typename T> Var<T> concat_rows(const Var<T>& a, const Var<T>& b);

// y = x W + b with x [..., D_in], W [D_in, D_out], b [D_out].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// Row softmax of logits / temperature, max-subtracted.
template <typename T> Var<T> softmax_t(const Var<T>& logits, T temperature);

// Scaled dot-product attention over [B, P, D] with D split into `heads`.
template <typename T> Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads);

template <typename T> Var<T> l2_normalize(const Var<T>& x, T eps = T(1e-12));

// Inverted dropout: Bernoulli keep mask scaled by 1/(1 - rate). Identity when
// !train or rate == 0.
template <typename T> Var<T> dropout(const Var<T>& x, double rate, Rng& rng, bool train);

// Mean over rows of -sum_k target_k log softmax(logits)_k. targets rows must be
// distributions over K classes.
template <typename T> Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& targets);

// Plain-value helpers used by inference code paths.
template <typename T> void softmax_row_inplace(std::span<T> row, T temperature);
template <typename T> T dot(std::span<const T> a, std::span<const T> b);
template <typename T> T norm2(std::span<const T> a);

}  // namespace geomoe
