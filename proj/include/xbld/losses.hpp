#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xbld/autodiff.hpp"
#include "xbld/dataset.hpp"
#include "xbld/gradcam.hpp"
#include "xbld/model.hpp"

namespace xbld {

/// Area-average downsampling binarized at 0.5: a grid cell is masked iff at
/// least half of its (area-weighted) source pixels are masked.
BinaryMask align_mask_to_grid(const BinaryMask& mask, int hs, int ws);

/// Saliency-grid cells that lie on the confounder and activate above eps.
struct IntersectionSet {
  std::vector<std::pair<int, int>> coords;  // (row, col) at grid resolution
  std::vector<double> activations;
  std::string instance_id;
};

IntersectionSet intersect(const Tensor& expl_native, const BinaryMask& con_mask_grid, double eps);

/// (min dist + max dist) / 2 / grid_diag between intersection points and the
/// object centroid G; empty intersections score 0.
double distance_score(const IntersectionSet& inter, std::pair<double, double> g,
                      double grid_diag);

struct LossCoefficients {
  double lambda1 = 2.7;   // classification weight
  double lambda2 = 0.1;   // explanation weight
  double lambda = 1e-5;   // weight decay
};

struct LossBreakdown {
  double ce = 0.0;
  double expl = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double lambda1 = 0.0, lambda2 = 0.0, lambda = 0.0;
  std::vector<double> per_instance_expl;
};

/// Grid-resolution annotations for one batch, precomputed from instances.
struct BatchAnnotations {
  std::vector<int> labels;
  std::vector<BinaryMask> con_grid;                      // aligned to feature grid
  std::vector<std::optional<std::pair<double, double>>> centroids;  // nullopt = skip
  std::vector<BinaryMask> avoid_input;                   // con masks at input resolution
  int grid_h = 0, grid_w = 0;
  int skipped = 0;  // instances with empty (aligned) obj masks

  static BatchAnnotations from_instances(const std::vector<DecoyInstance>& instances,
                                         const std::vector<int>& indices, int grid_h,
                                         int grid_w);
};

struct ExplLossResult {
  ad::Var loss;                       // scalar graph node
  std::vector<double> per_instance;   // D_n * S_n diagnostics (0 for skipped)
  int n_contributing = 0;
};

/// XBL-D explanation loss: mean over contributing instances of
/// detached-distance-weight x differentiable activation mass on the
/// confounder. Instances whose aligned object mask is empty are skipped.
ExplLossResult xbl_d_expl_loss(const ForwardResult& fr, const BatchAnnotations& ann, double eps,
                               const CamNormStats* pinned = nullptr);

/// Convenience overload building its own forward pass.
ExplLossResult xbl_d_expl_loss(const Model& model, const std::vector<DecoyInstance>& batch,
                               double eps = 0.0);

struct CombinedLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

/// total = lambda1*CE + lambda2*L_expl + lambda*sum(theta^2), all three terms
/// differentiable w.r.t. theta.
CombinedLoss combined_loss(const ForwardResult& fr, const BatchAnnotations& ann,
                           const LossCoefficients& coeffs, double eps = 0.0,
                           const CamNormStats* pinned = nullptr);
CombinedLoss combined_loss(const Model& model, const std::vector<DecoyInstance>& batch,
                           const LossCoefficients& coeffs, double eps = 0.0);

/// RRR: sum over batch and pixels of (M_n * d/dx_n sum_k log yhat_nk)^2.
/// Requires fr built with input_grad=true.
ad::Var rrr_expl_loss(const ForwardResult& fr, const std::vector<BinaryMask>& avoid_masks);
ad::Var rrr_expl_loss(const Model& model, const std::vector<DecoyInstance>& batch);

/// RRR-G: sum over batch and grid cells of M_n * GradCAM(x_n).
ExplLossResult rrr_g_expl_loss(const ForwardResult& fr, const BatchAnnotations& ann,
                               const CamNormStats* pinned = nullptr);
ExplLossResult rrr_g_expl_loss(const Model& model, const std::vector<DecoyInstance>& batch);

/// Sum of squared parameters as a graph node (the caller applies lambda).
ad::Var weight_squares(const std::vector<ad::Var>& param_vars);

}  // namespace xbld
