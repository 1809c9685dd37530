#include "xbld/autodiff.hpp"

#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "xbld/ops.hpp"

namespace xbld::ad {

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

std::vector<Var> grad(const Var& root, const std::vector<Var>& wrt) {
  if (!root || !root->value.defined() || root->value.numel() != 1)
    throw std::invalid_argument("grad: root must be a defined scalar");

  // Post-order over the grad-requiring subgraph, iterative to keep deep
  // training graphs off the call stack.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> seen;
  if (root->requires_grad) {
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen[root.get()] = 1;
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.second < top.first->parents.size()) {
        Node* p = top.first->parents[top.second].get();
        ++top.second;
        if (p->requires_grad) {
          int& st = seen[p];
          if (st == 0) {
            st = 1;
            stack.push_back({p, 0});
          }
        }
      } else {
        order.push_back(top.first);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<Node*, Var> grads;
  grads[root.get()] = constant(Tensor::full(root->value.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto git = grads.find(node);
    if (git == grads.end() || !node->vjp) continue;
    std::vector<Var> pg(node->parents.size());
    node->vjp(git->second, pg);
    for (size_t i = 0; i < pg.size(); ++i) {
      if (!pg[i]) continue;
      Node* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto ex = grads.find(p);
      if (ex == grads.end())
        grads.emplace(p, pg[i]);
      else
        ex->second = add(ex->second, pg[i]);
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.get());
    if (it != grads.end())
      out.push_back(it->second);
    else
      out.push_back(constant(Tensor::zeros(w->value.shape())));
  }
  return out;
}

}  // namespace xbld::ad
