#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "xbld/tensor.hpp"

namespace xbld::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in a define-by-run graph. Backward functions build graph nodes
/// (not raw buffers), so a gradient is itself differentiable — the XBL losses
/// need this because Grad-CAM weights are gradients of the class logit.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  /// Fills parent_grads (same length as parents; entries may stay null for
  /// parents that do not require grad).
  std::function<void(const Var& grad_out, std::vector<Var>& parent_grads)> vjp;
  const char* op = "leaf";
};

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

/// Gradients of a scalar root with respect to each entry of wrt. Entries
/// with no path to the root come back as zero tensors of matching shape.
std::vector<Var> grad(const Var& root, const std::vector<Var>& wrt);

}  // namespace xbld::ad
