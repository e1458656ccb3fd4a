#include "geomoe/ops.hpp"

#include <cmath>
#include <limits>

namespace geomoe {

namespace {

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
bool wants_grad(const Node<T>& parent_owner, std::size_t i) {
  return parent_owner.parents[i]->requires_grad;
}

template <typename T>
Tensor<T>& parent_grad(Node<T>& n, std::size_t i) {
  return n.parents[i]->grad_buffer();
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(n, p)) continue;
      auto& g = parent_grad(n, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (wants_grad(n, 0)) {
      auto& g = parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = parent_grad(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  return Var<T>::make(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = parent_grad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    auto& g = parent_grad(n, 0);
    const auto& y = n.value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (y[i] > T(0)) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().vec()) s += v;
  return Var<T>::make(Tensor<T>(Shape{}, s), {a}, [](Node<T>& n) {
    auto& g = parent_grad(n, 0);
    const T go = n.grad[0];
    for (auto& v : g.vec()) v += go;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t count = a.value().size();
  if (count == 0) throw DimensionError("mean of empty tensor");
  T s = 0;
  for (T v : a.value().vec()) s += v;
  return Var<T>::make(Tensor<T>(Shape{}, s / T(count)), {a}, [count](Node<T>& n) {
    auto& g = parent_grad(n, 0);
    const T go = n.grad[0] / T(count);
    for (auto& v : g.vec()) v += go;
  });
}

template <typename T>
Var<T> mean_over_patches(const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[1] == 0) throw DimensionError("mean_over_patches expects [B,P,D], got " + shape_str(s));
  const std::size_t B = s[0], P = s[1], D = s[2];
  Tensor<T> out({B, D});
  const auto& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t d = 0; d < D; ++d) out[b * D + d] += xv[(b * P + p) * D + d];
  for (auto& v : out.vec()) v /= T(P);
  return Var<T>::make(std::move(out), {x}, [B, P, D](Node<T>& n) {
    auto& g = parent_grad(n, 0);
    const T inv = T(1) / T(P);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t d = 0; d < D; ++d) g[(b * P + p) * D + d] += n.grad[b * D + d] * inv;
  });
}

template <typename T>
Var<T> add_per_patch(const Var<T>& x, const Var<T>& table) {
  const auto& s = x.shape();
  const auto& ts = table.shape();
  if (s.size() != 3 || ts.size() != 2 || ts[0] != s[1] || ts[1] != s[2]) {
    throw DimensionError("add_per_patch: " + shape_str(s) + " vs table " + shape_str(ts));
  }
  const std::size_t block = ts[0] * ts[1];
  Tensor<T> out = x.value();
  const auto& tv = table.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tv[i % block];
  return Var<T>::make(std::move(out), {x, table}, [block](Node<T>& n) {
    if (wants_grad(n, 0)) {
      auto& g = parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = parent_grad(n, 1);
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % block] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) {
    throw DimensionError("concat_rows: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  std::vector<T> d = a.value().vec();
  d.insert(d.end(), b.value().vec().begin(), b.value().vec().end());
  const std::size_t na = a.value().size();
  return Var<T>::make(Tensor<T>({sa[0] + sb[0], sa[1]}, std::move(d)), {a, b}, [na](Node<T>& n) {
    if (wants_grad(n, 0)) {
      auto& g = parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = parent_grad(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0] || b.shape() != Shape{ws[1]}) {
    throw DimensionError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws) +
                         " / bias " + shape_str(b.shape()));
  }
  const std::size_t din = ws[0], dout = ws[1];
  const std::size_t rows = x.value().size() / din;
  Shape os = xs;
  os.back() = dout;
  Tensor<T> out(os);
  const T* X = x.value().data();
  const T* W = w.value().data();
  const T* Bv = b.value().data();
  T* Y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* y = Y + r * dout;
    for (std::size_t j = 0; j < dout; ++j) y[j] = Bv[j];
    const T* xr = X + r * din;
    for (std::size_t k = 0; k < din; ++k) {
      const T xv = xr[k];
      const T* wk = W + k * dout;
      for (std::size_t j = 0; j < dout; ++j) y[j] += xv * wk[j];
    }
  }
  return Var<T>::make(std::move(out), {x, w, b}, [rows, din, dout](Node<T>& n) {
    const T* G = n.grad.data();
    const T* X = n.parents[0]->value.data();
    const T* W = n.parents[1]->value.data();
    if (wants_grad(n, 0)) {
      T* dX = parent_grad(n, 0).data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = G + r * dout;
        T* dx = dX + r * din;
        for (std::size_t k = 0; k < din; ++k) {
          const T* wk = W + k * dout;
          T acc = 0;
          for (std::size_t j = 0; j < dout; ++j) acc += g[j] * wk[j];
          dx[k] += acc;
        }
      }
    }
    if (wants_grad(n, 1)) {
      T* dW = parent_grad(n, 1).data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = G + r * dout;
        const T* xr = X + r * din;
        for (std::size_t k = 0; k < din; ++k) {
          const T xv = xr[k];
          if (xv == T(0)) continue;
          T* dw = dW + k * dout;
          for (std::size_t j = 0; j < dout; ++j) dw[j] += xv * g[j];
        }
      }
    }
    if (wants_grad(n, 2)) {
      T* dB = parent_grad(n, 2).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < dout; ++j) dB[j] += G[r * dout + j];
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto& xs = x.shape();
  if (xs.empty() || xs.back() == 0) throw DimensionError("layer_norm over an empty axis: " + shape_str(xs));
  const std::size_t D = xs.back();
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
    throw DimensionError("layer_norm: affine shape " + shape_str(gamma.shape()) + " does not match " +
                         shape_str(xs));
  }
  const std::size_t rows = x.value().size() / D;
  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  std::vector<T> rstd(rows);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * D;
    T mu = 0;
    for (std::size_t d = 0; d < D; ++d) mu += xr[d];
    mu /= T(D);
    T var = 0;
    for (std::size_t d = 0; d < D; ++d) var += (xr[d] - mu) * (xr[d] - mu);
    var /= T(D);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t d = 0; d < D; ++d) {
      const T h = (xr[d] - mu) * rs;
      xhat[r * D + d] = h;
      out[r * D + d] = gv[d] * h + bv[d];
    }
  }
  return Var<T>::make(std::move(out), {x, gamma, beta},
                      [rows, D, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& n) {
                        const auto& gv = n.parents[1]->value;
                        if (wants_grad(n, 0)) {
                          auto& dx = parent_grad(n, 0);
                          std::vector<T> dh(D);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T m1 = 0, m2 = 0;
                            for (std::size_t d = 0; d < D; ++d) {
                              dh[d] = n.grad[r * D + d] * gv[d];
                              m1 += dh[d];
                              m2 += dh[d] * xhat[r * D + d];
                            }
                            m1 /= T(D);
                            m2 /= T(D);
                            for (std::size_t d = 0; d < D; ++d) {
                              dx[r * D + d] += rstd[r] * (dh[d] - m1 - xhat[r * D + d] * m2);
                            }
                          }
                        }
                        if (wants_grad(n, 1)) {
                          auto& dg = parent_grad(n, 1);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t d = 0; d < D; ++d) dg[d] += n.grad[r * D + d] * xhat[r * D + d];
                        }
                        if (wants_grad(n, 2)) {
                          auto& db = parent_grad(n, 2);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t d = 0; d < D; ++d) db[d] += n.grad[r * D + d];
                        }
                      });
}

template <typename T>
void softmax_row_inplace(std::span<T> row, T temperature) {
  if (!(temperature > T(0))) throw ValidationError("softmax temperature must be > 0");
  if (row.empty()) return;
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  T s = 0;
  for (auto& v : row) {
    v = std::exp((v - mx) / temperature);
    s += v;
  }
  for (auto& v : row) v /= s;
}

template <typename T>
Var<T> softmax_t(const Var<T>& logits, T temperature) {
  if (!(temperature > T(0))) throw ValidationError("softmax temperature must be > 0, got " + std::to_string(temperature));
  Tensor<T> out = logits.value();
  const std::size_t K = out.last_dim();
  const std::size_t rows = out.rows();
  for (std::size_t r = 0; r < rows; ++r) softmax_row_inplace(out.row(r), temperature);
  return Var<T>::make(std::move(out), {logits}, [K, rows, temperature](Node<T>& n) {
    auto& g = parent_grad(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = n.value.data() + r * K;
      const T* go = n.grad.data() + r * K;
      T dotp = 0;
      for (std::size_t k = 0; k < K; ++k) dotp += go[k] * y[k];
      for (std::size_t k = 0; k < K; ++k) g[r * K + k] += y[k] * (go[k] - dotp) / temperature;
    }
  });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads) {
  const auto& s = q.shape();
  if (s.size() != 3 || k.shape() != s || v.shape() != s) {
    throw DimensionError("attention: q " + shape_str(s) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  const std::size_t B = s[0], P = s[1], D = s[2];
  if (heads == 0 || D % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = D / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  Tensor<T> out(s);
  Tensor<T> probs({B, heads, P, P});
  const T* Q = q.value().data();
  const T* K = k.value().data();
  const T* V = v.value().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* A = probs.data() + ((b * heads + h) * P) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const T* qi = Q + (b * P + i) * D + h * dh;
        T* ai = A + i * P;
        for (std::size_t j = 0; j < P; ++j) {
          const T* kj = K + (b * P + j) * D + h * dh;
          T acc = 0;
          for (std::size_t d = 0; d < dh; ++d) acc += qi[d] * kj[d];
          ai[j] = acc * sc;
        }
        softmax_row_inplace(std::span<T>(ai, P), T(1));
        T* oi = out.data() + (b * P + i) * D + h * dh;
        for (std::size_t j = 0; j < P; ++j) {
          const T a = ai[j];
          const T* vj = V + (b * P + j) * D + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += a * vj[d];
        }
      }
    }
  }
  return Var<T>::make(std::move(out), {q, k, v}, [B, P, D, heads, dh, sc, probs = std::move(probs)](Node<T>& n) {
    const T* Q = n.parents[0]->value.data();
    const T* K = n.parents[1]->value.data();
    const T* V = n.parents[2]->value.data();
    const T* G = n.grad.data();
    const bool gq = wants_grad(n, 0), gk = wants_grad(n, 1), gv = wants_grad(n, 2);
    T* dQ = gq ? parent_grad(n, 0).data() : nullptr;
    T* dK = gk ? parent_grad(n, 1).data() : nullptr;
    T* dV = gv ? parent_grad(n, 2).data() : nullptr;
    std::vector<T> dA(P * P);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const T* A = probs.data() + ((b * heads + h) * P) * P;
        // dA = dO V^T ; dV = A^T dO
        for (std::size_t i = 0; i < P; ++i) {
          const T* gi = G + (b * P + i) * D + h * dh;
          for (std::size_t j = 0; j < P; ++j) {
            const T* vj = V + (b * P + j) * D + h * dh;
            T acc = 0;
            for (std::size_t d = 0; d < dh; ++d) acc += gi[d] * vj[d];
            dA[i * P + j] = acc;
            if (gv) {
              T* dvj = dV + (b * P + j) * D + h * dh;
              const T a = A[i * P + j];
              for (std::size_t d = 0; d < dh; ++d) dvj[d] += a * gi[d];
            }
          }
        }
        // dS = A * (dA - rowsum(dA * A)), scaled.
        for (std::size_t i = 0; i < P; ++i) {
          T rs = 0;
          for (std::size_t j = 0; j < P; ++j) rs += dA[i * P + j] * A[i * P + j];
          for (std::size_t j = 0; j < P; ++j) dA[i * P + j] = A[i * P + j] * (dA[i * P + j] - rs) * sc;
        }
        for (std::size_t i = 0; i < P; ++i) {
          const T* qi = Q + (b * P + i) * D + h * dh;
          for (std::size_t j = 0; j < P; ++j) {
            const T ds = dA[i * P + j];
            if (ds == T(0)) continue;
            const T* kj = K + (b * P + j) * D + h * dh;
            if (gq) {
              T* dqi = dQ + (b * P + i) * D + h * dh;
              for (std::size_t d = 0; d < dh; ++d) dqi[d] += ds * kj[d];
            }
            if (gk) {
              T* dkj = dK + (b * P + j) * D + h * dh;
              for (std::size_t d = 0; d < dh; ++d) dkj[d] += ds * qi[d];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> l2_normalize(const Var<T>& x, T eps) {
  Tensor<T> out = x.value();
  const std::size_t D = out.last_dim();
  const std::size_t rows = out.rows();
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.row(r);
    T s = 0;
    for (T v : row) s += v * v;
    norms[r] = std::max(std::sqrt(s), eps);
    for (auto& v : row) v /= norms[r];
  }
  return Var<T>::make(std::move(out), {x}, [D, rows, norms = std::move(norms)](Node<T>& n) {
    auto& g = parent_grad(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = n.value.data() + r * D;
      const T* go = n.grad.data() + r * D;
      T dotp = 0;
      for (std::size_t d = 0; d < D; ++d) dotp += go[d] * y[d];
      for (std::size_t d = 0; d < D; ++d) g[r * D + d] += (go[d] - y[d] * dotp) / norms[r];
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.vec()) m = rng.uniform() < rate ? T(0) : keep_scale;
  return mul(x, constant(std::move(mask)));
}

template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& targets) {
  const auto& s = logits.shape();
  if (s.size() != 2 || targets.shape() != s) {
    throw DimensionError("soft_cross_entropy: logits " + shape_str(s) + " vs targets " + shape_str(targets.shape()));
  }
  const std::size_t B = s[0], K = s[1];
  if (B == 0) throw DimensionError("soft_cross_entropy on empty batch");
  Tensor<T> probs = logits.value();
  T loss = 0;
  for (std::size_t r = 0; r < B; ++r) {
    const T* z = logits.value().data() + r * K;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, z[k]);
    T se = 0;
    for (std::size_t k = 0; k < K; ++k) se += std::exp(z[k] - mx);
    const T lse = mx + std::log(se);
    for (std::size_t k = 0; k < K; ++k) {
      loss -= targets[r * K + k] * (z[k] - lse);
      probs[r * K + k] = std::exp(z[k] - lse);
    }
  }
  loss /= T(B);
  return Var<T>::make(Tensor<T>(Shape{}, loss), {logits},
                      [B, K, targets, probs = std::move(probs)](Node<T>& n) {
                        auto& g = parent_grad(n, 0);
                        const T go = n.grad[0] / T(B);
                        for (std::size_t r = 0; r < B; ++r) {
                          T ts = 0;
                          for (std::size_t k = 0; k < K; ++k) ts += targets[r * K + k];
                          for (std::size_t k = 0; k < K; ++k) {
                            g[r * K + k] += go * (ts * probs[r * K + k] - targets[r * K + k]);
                          }
                        }
                      });
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T norm2(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

#define GEOMOE_INSTANTIATE_OPS(T)                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                       \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> scale(const Var<T>&, T);                                                 \
  template Var<T> relu(const Var<T>&);                                                     \
  template Var<T> sum(const Var<T>&);                                                      \
  template Var<T> mean(const Var<T>&);                                                     \
  template Var<T> mean_over_patches(const Var<T>&);                                        \
  template Var<T> add_per_patch(const Var<T>&, const Var<T>&);                             \
  template Var<T> concat_rows(const Var<T>&, const Var<T>&);                               \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);              \
  template Var<T> softmax_t(const Var<T>&, T);                                             \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t);     \
  template Var<T> l2_normalize(const Var<T>&, T);                                          \
  template Var<T> dropout(const Var<T>&, double, Rng&, bool);                              \
  template Var<T> soft_cross_entropy(const Var<T>&, const Tensor<T>&);                     \
  template void softmax_row_inplace(std::span<T>, T);                                      \
  template T dot(std::span<const T>, std::span<const T>);                                  \
  template T norm2(std::span<const T>);

GEOMOE_INSTANTIATE_OPS(float)
GEOMOE_INSTANTIATE_OPS(double)

}  // namespace geomoe
