#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "geomoe/tensor.hpp"

namespace geomoe {

// Tape-free reverse mode: every op result keeps shared pointers to its inputs
// and a closure that pushes its gradient back into them. backward() walks the
// resulting DAG in reverse topological order.

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

// Thread-local switch used by inference paths to skip graph construction.
class GradMode {
 public:
  static bool enabled();
  static void set(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Result of an op: records inputs and backward closure only when some input
  // requires a gradient and grad mode is on.
  static Var make(Tensor<T> value, std::vector<Var> inputs, std::function<void(Node<T>&)> backward_fn);

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> Var<T>::make(Tensor<T> value, std::vector<Var> inputs, std::function<void(Node<T>&)> backward_fn) {
  Var out(std::move(value));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  for (auto& in : inputs) out.node_->parents.push_back(in.node_);
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

// Seeds d(loss)/d(loss) = 1 and propagates. loss must hold a single element.
template <typename T>
void backward(const Var<T>& loss);

enum class ParamGroup { experts, head, backbone, loc_proj };

std::string_view group_name(ParamGroup g);
ParamGroup group_from_name(std::string_view s);

// Trainable leaf. The node is shared, so copying a Parameter aliases it; use
// clone() for an independent copy.
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, ParamGroup group, Tensor<T> init)
      : name_(std::move(name)), group_(group), var_(std::move(init), true) {}

  const std::string& name() const { return name_; }
  ParamGroup group() const { return group_; }
  void set_group(ParamGroup g) { group_ = g; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  const Var<T>& var() const { return var_; }
  const Tensor<T>& value() const { return var_.value(); }
  Tensor<T>& mutable_value() { return var_.mutable_value(); }
  const Tensor<T>& grad() const { return var_.grad(); }
  Tensor<T>& grad_buffer() { return var_.node()->grad_buffer(); }
  void zero_grad() {
    auto& g = var_.node()->grad;
    if (!g.empty()) g.fill(T(0));
  }

  // Optimizer moments live with the parameter.
  Tensor<T>& moment1() { return m_; }
  Tensor<T>& moment2() { return v_; }
  std::int64_t& step_count() { return steps_; }

  Parameter clone() const {
    Parameter p(name_, group_, var_.value());
    p.frozen_ = frozen_;
    p.m_ = m_;
    p.v_ = v_;
    p.steps_ = steps_;
    return p;
  }

 private:
  std::string name_;
  ParamGroup group_ = ParamGroup::backbone;
  bool frozen_ = false;
  Var<T> var_;
  Tensor<T> m_, v_;
  std::int64_t steps_ = 0;
};

}  // namespace geomoe
