#include "geomoe/autograd.hpp"

#include <unordered_set>

namespace geomoe {

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set(bool on) { grad_enabled = on; }

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw DimensionError("backward() needs a single-element loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::experts: return "experts";
    case ParamGroup::head: return "head";
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::loc_proj: return "loc_proj";
  }
  return "backbone";
}

ParamGroup group_from_name(std::string_view s) {
  if (s == "experts") return ParamGroup::experts;
  if (s == "head") return ParamGroup::head;
  if (s == "backbone") return ParamGroup::backbone;
  if (s == "loc_proj") return ParamGroup::loc_proj;
  throw ConfigError("unknown parameter group '" + std::string(s) + "'");
}

}  // namespace geomoe
