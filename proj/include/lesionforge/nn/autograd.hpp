#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "lesionforge/nn/tensor.hpp"

namespace lf::nn {

template <typename T>
struct Node;

/// Handle to a value in the computation graph.
template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  /// Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  bool has_grad() const noexcept { return !grad.empty(); }
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape(), T{0});
    return grad;
  }
  void zero_grad() { grad = Tensor<T>(); }
};

/// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

/// Leaf copy of v's value, cut from the graph.
template <typename T>
Var<T> detach(const Var<T>& v) {
  return constant(v->value);
}

/// Creates an op node. The backward closure is kept only when some parent
/// requires a gradient and grad mode is on.
template <typename T, typename F>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, F&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool rg = false;
  if (grad_enabled())
    for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::forward<F>(backward);
  }
  return n;
}

/// Reverse-mode sweep from a scalar root (seeded with 1). Interior nodes drop
/// their closures afterwards; leaf grads accumulate.
template <typename T>
void backward(const Var<T>& root);

/// Named parameter list, used by optimizers and checkpoints.
template <typename T>
using ParamList = std::vector<std::pair<std::string, Var<T>>>;

template <typename T>
void zero_grad(const ParamList<T>& params) {
  for (const auto& [name, p] : params) p->zero_grad();
}

template <typename T>
void set_requires_grad(const ParamList<T>& params, bool on) {
  for (const auto& [name, p] : params) p->requires_grad = on;
}

}  // namespace lf::nn
