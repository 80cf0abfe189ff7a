#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "wsseg/tensor.hpp"

namespace wsseg::nn {

// Dynamic tape. Each op returns a Node holding its value; when grad mode is
// on and an input requires grad, the node also records its parents and a
// closure that routes the node's gradient into them. backward() walks the
// tape in reverse topological order.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  bool has_grad() const { return !grad.empty(); }
};

// Grad recording is thread-local: map extraction runs one tape per worker.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }

 private:
  bool prev_;
};

Var constant(Tensor v);
Var parameter(Tensor v);
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop);

// grad += g, allocating on first use.
void accumulate(Node& n, const Tensor& g);
Tensor& ensure_grad(Node& n);

// Seeds dL/d(root) and propagates. The multi-root overload supports models
// with several supervised outputs (e.g. boundary + displacement branches).
void backward(const Var& root, const Tensor& seed);
void backward(const std::vector<std::pair<Var, Tensor>>& seeds);

void zero_grad(const std::vector<Var>& params);

}  // namespace wsseg::nn
