#include "wsseg/nn/autograd.hpp"

#include <unordered_set>

namespace wsseg::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Var parameter(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
    }
  }
  return n;
}

Tensor& ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void accumulate(Node& n, const Tensor& g) {
  Tensor& dst = ensure_grad(n);
  const int64_t count = dst.numel();
  float* d = dst.data();
  const float* s = g.data();
  for (int64_t i = 0; i < count; ++i) d[i] += s[i];
}

namespace {

// Iterative post-order topological sort over the requires_grad subgraph.
void topo_collect(const std::vector<Var>& roots, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  for (const auto& r : roots) {
    if (!r || !r->requires_grad || visited.count(r.get())) continue;
    stack.push_back({r.get(), 0});
    visited.insert(r.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node* p = f.node->parents[f.next_parent++].get();
        if (p && p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }
}

}  // namespace

void backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
  std::vector<Var> roots;
  roots.reserve(seeds.size());
  for (const auto& [v, g] : seeds) {
    if (!v->value.same_shape(g)) throw ShapeError("backward: seed shape mismatch");
    roots.push_back(v);
  }
  std::vector<Node*> order;
  topo_collect(roots, order);
  for (const auto& [v, g] : seeds) {
    if (v->requires_grad) accumulate(*v, g);
  }
  // Post-order puts parents before children; walk children-first.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->has_grad()) n->backprop(*n);
  }
}

void backward(const Var& root, const Tensor& seed) {
  backward(std::vector<std::pair<Var, Tensor>>{{root, seed}});
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params)
    if (p && p->has_grad()) p->grad.fill(0.0f);
}

}  // namespace wsseg::nn
