#pragma once

#include <vector>

#include "geomoe/ops.hpp"

namespace geomoe {

struct SupConStats {
  std::size_t anchors = 0;
  std::size_t skipped = 0;  // anchors without any positive
};

// Supervised contrastive loss over 2N unit vectors. Rows 0..N-1 are the image
// views and rows N..2N-1 the location views of the same samples; labels holds
// one class per sample (size N) or one per row (size 2N). Mean over anchors
// that have at least one positive.
template <typename T>
Var<T> supcon_loss(const Var<T>& views, const std::vector<int>& labels, T tau, SupConStats* stats = nullptr);

// Row targets (1 - eps) one_hot + eps / K.
template <typename T>
Tensor<T> smoothed_targets(const std::vector<int>& labels, std::size_t num_classes, double eps);

// Lowest reachable cross-entropy against a smoothed target: its entropy.
double smoothed_ce_floor(std::size_t num_classes, double eps);

// Pairing for mixup: sample i is blended with partner[i] at weight lambda.
struct MixupPlan {
  double lambda = 1.0;
  std::vector<std::size_t> partner;
  // Label and location of the dominant (lambda >= 0.5) side.
  std::size_t dominant(std::size_t i) const { return lambda >= 0.5 ? i : partner[i]; }
};

MixupPlan draw_mixup(std::size_t batch, double alpha, Rng& rng);

// x_i <- lambda x_i + (1 - lambda) x_partner(i), along the leading axis.
template <typename T>
Tensor<T> mix_rows(const Tensor<T>& x, const MixupPlan& plan);

}  // namespace geomoe
