#include "geomoe/losses.hpp"

#include <cmath>
#include <limits>

namespace geomoe {

template <typename T>
Var<T> supcon_loss(const Var<T>& views, const std::vector<int>& labels, T tau, SupConStats* stats) {
  if (!(tau > T(0))) throw ValidationError("supcon temperature must be > 0");
  const auto& s = views.shape();
  if (s.size() != 2) throw DimensionError("supcon views must be [2N, D], got " + shape_str(s));
  const std::size_t R = s[0], D = s[1];
  std::vector<int> lab;
  if (labels.size() * 2 == R) {
    lab = labels;
    lab.insert(lab.end(), labels.begin(), labels.end());
  } else if (labels.size() == R) {
    lab = labels;
  } else {
    throw DimensionError("supcon: " + std::to_string(labels.size()) + " labels for " + std::to_string(R) + " views");
  }
  if (R < 4 && labels.size() * 2 == R) throw ValidationError("supcon needs N >= 2 samples");
  if (R < 2) throw ValidationError("supcon needs at least 2 views");

  const Tensor<T>& z = views.value();
  for (std::size_t i = 0; i < R; ++i) {
    const T n = norm2<T>(z.row(i));
    if (std::abs(static_cast<double>(n) - 1.0) > 1e-4) {
      throw ValidationError("supcon view " + std::to_string(i) + " has norm " + std::to_string(static_cast<double>(n)) +
                            ", expected 1");
    }
  }

  // sim[i][j] = z_i . z_j / tau
  std::vector<T> sim(R * R);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = i; j < R; ++j) sim[i * R + j] = sim[j * R + i] = dot<T>(z.row(i), z.row(j)) / tau;

  // G[i][j] = dL/dsim[i][j]
  std::vector<T> G(R * R, T(0));
  T loss = 0;
  std::size_t anchors = 0, skipped = 0;
  std::vector<T> p(R);
  for (std::size_t i = 0; i < R; ++i) {
    std::size_t npos = 0;
    for (std::size_t j = 0; j < R; ++j) npos += (j != i && lab[j] == lab[i]);
    if (npos == 0) {
      ++skipped;
      continue;
    }
    ++anchors;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < R; ++j)
      if (j != i) mx = std::max(mx, sim[i * R + j]);
    T se = 0;
    for (std::size_t j = 0; j < R; ++j) {
      p[j] = j == i ? T(0) : std::exp(sim[i * R + j] - mx);
      se += p[j];
    }
    const T lse = mx + std::log(se);
    T li = 0;
    for (std::size_t j = 0; j < R; ++j) {
      if (j == i) continue;
      const bool pos = lab[j] == lab[i];
      if (pos) li -= (sim[i * R + j] - lse);
      G[i * R + j] = p[j] / se - (pos ? T(1) / T(npos) : T(0));
    }
    loss += li / T(npos);
  }
  if (stats) *stats = {anchors, skipped};
  if (anchors == 0) return Var<T>(Tensor<T>(Shape{}, T(0)));
  loss /= T(anchors);
  const T gscale = T(1) / (T(anchors) * tau);
  for (auto& g : G) g *= gscale;

  return Var<T>::make(Tensor<T>(Shape{}, loss), {views}, [R, D, G = std::move(G)](Node<T>& n) {
    const auto& zv = n.parents[0]->value;
    auto& g = n.parents[0]->grad_buffer();
    const T go = n.grad[0];
    // dL/dz_i = sum_j (G_ij + G_ji) z_j
    for (std::size_t i = 0; i < R; ++i) {
      T* gi = g.data() + i * D;
      for (std::size_t j = 0; j < R; ++j) {
        const T c = go * (G[i * R + j] + G[j * R + i]);
        if (c == T(0)) continue;
        const T* zj = zv.data() + j * D;
        for (std::size_t d = 0; d < D; ++d) gi[d] += c * zj[d];
      }
    }
  });
}

template <typename T>
Tensor<T> smoothed_targets(const std::vector<int>& labels, std::size_t num_classes, double eps) {
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("label smoothing must be in [0,1)");
  Tensor<T> t({labels.size(), num_classes}, static_cast<T>(eps / static_cast<double>(num_classes)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(num_classes - 1));
    }
    t[i * num_classes + static_cast<std::size_t>(labels[i])] += static_cast<T>(1.0 - eps);
  }
  return t;
}

double smoothed_ce_floor(std::size_t num_classes, double eps) {
  const double K = static_cast<double>(num_classes);
  const double hi = 1.0 - eps + eps / K, lo = eps / K;
  double h = -hi * std::log(hi);
  if (lo > 0) h -= (K - 1) * lo * std::log(lo);
  return h;
}

MixupPlan draw_mixup(std::size_t batch, double alpha, Rng& rng) {
  MixupPlan plan;
  plan.partner.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) plan.partner[i] = i;
  if (alpha <= 0.0 || batch < 2) return plan;
  plan.lambda = rng.beta(alpha, alpha);
  rng.shuffle(plan.partner);
  return plan;
}

template <typename T>
Tensor<T> mix_rows(const Tensor<T>& x, const MixupPlan& plan) {
  if (plan.lambda == 1.0) return x;
  const std::size_t B = x.dim(0), F = x.size() / B;
  Tensor<T> out(x.shape());
  const T l = static_cast<T>(plan.lambda), r = static_cast<T>(1.0 - plan.lambda);
  for (std::size_t i = 0; i < B; ++i) {
    const T* a = x.data() + i * F;
    const T* b = x.data() + plan.partner[i] * F;
    T* o = out.data() + i * F;
    for (std::size_t f = 0; f < F; ++f) o[f] = l * a[f] + r * b[f];
  }
  return out;
}

template Var<float> supcon_loss(const Var<float>&, const std::vector<int>&, float, SupConStats*);
template Var<double> supcon_loss(const Var<double>&, const std::vector<int>&, double, SupConStats*);
template Tensor<float> smoothed_targets(const std::vector<int>&, std::size_t, double);
template Tensor<double> smoothed_targets(const std::vector<int>&, std::size_t, double);
template Tensor<float> mix_rows(const Tensor<float>&, const MixupPlan&);
template Tensor<double> mix_rows(const Tensor<double>&, const MixupPlan&);

}  // namespace geomoe
