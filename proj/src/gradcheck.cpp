#include "geomoe/gradcheck.hpp"

#include <cmath>

namespace geomoe {

namespace {

template <typename T>
double eval_loss(const std::function<Var<T>()>& loss_fn) {
  NoGradGuard guard;
  const Var<T> l = loss_fn();
  const double v = static_cast<double>(l.value()[0]);
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
  return v;
}

}  // namespace

template <typename T>
GradCheckResult finite_diff_check(const std::function<Var<T>()>& loss_fn, const std::vector<Var<T>>& leaves,
                                  const GradCheckOptions& opts) {
  if (!(opts.eps >= 1e-7 && opts.eps <= 1e-3)) {
    throw ConfigError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  }
  for (const auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw StateError("finite_diff_check: leaf does not require grad");
    auto& g = leaf.node()->grad;
    if (!g.empty()) g.fill(T(0));
  }

  const Var<T> loss = loss_fn();
  if (!std::isfinite(static_cast<double>(loss.value()[0]))) {
    throw NumericError("finite_diff_check: loss is not finite");
  }
  backward(loss);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t l = 0; l < leaves.size(); ++l)
    for (std::size_t i = 0; i < leaves[l].value().size(); ++i) coords.emplace_back(l, i);
  if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
    Rng rng(opts.seed);
    rng.shuffle(coords);
    coords.resize(opts.max_coords);
  }

  GradCheckResult result;
  for (const auto& [l, i] : coords) {
    Node<T>* node = leaves[l].node();
    const T analytic = node->grad.empty() ? T(0) : node->grad[i];
    const T orig = node->value[i];
    node->value[i] = orig + static_cast<T>(opts.eps);
    const double lp = eval_loss<T>(loss_fn);
    node->value[i] = orig - static_cast<T>(opts.eps);
    const double lm = eval_loss<T>(loss_fn);
    node->value[i] = orig;
    const double numeric = (lp - lm) / (2.0 * opts.eps);
    const double a = static_cast<double>(analytic);
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.coords_checked;
  }
  return result;
}

template GradCheckResult finite_diff_check<float>(const std::function<Var<float>()>&, const std::vector<Var<float>>&,
                                                  const GradCheckOptions&);
template GradCheckResult finite_diff_check<double>(const std::function<Var<double>()>&,
                                                   const std::vector<Var<double>>&, const GradCheckOptions&);

}  // namespace geomoe
