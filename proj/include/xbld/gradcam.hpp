#pragma once

#include <vector>

#include "xbld/autodiff.hpp"
#include "xbld/dataset.hpp"
#include "xbld/model.hpp"

namespace xbld {

struct SaliencyMap {
  enum class Norm { raw, minmax };
  enum class Resolution { native, input };

  Tensor values;  // [Hs,Ws] native or [H,W] input resolution
  Norm normalization = Norm::minmax;
  int target_class = 0;
  Resolution resolution_tag = Resolution::native;
};

/// Per-map normalization constants captured from a raw CAM batch. The
/// divisor is detached: inside a loss it is held constant so gradients track
/// raw activation mass (and finite-difference checks see the same function).
struct CamNormStats {
  std::vector<double> shift;      // per-map min
  std::vector<double> inv_range;  // 1/(max-min), or 0 when the map is flat
  std::vector<bool> flat_positive;  // constant map with positive value -> all ones
};

CamNormStats compute_cam_stats(const Tensor& cam_raw);  // [B,Hs,Ws]

/// (cam - min) * inv_range as a graph op; flat positive maps become all-ones
/// constants, flat zero/negative maps become zeros.
ad::Var normalize_cam(const ad::Var& cam_raw, const CamNormStats& stats);

/// Batched differentiable Grad-CAM: weights alpha_k are the spatial mean of
/// d(logit of classes[n])/dA^k, map is ReLU(sum_k alpha_k A^k), min-max
/// normalized per map. The result stays differentiable w.r.t. theta, so it
/// can sit inside a loss. Pass pinned stats to freeze the normalization.
ad::Var grad_cam_graph(const ForwardResult& fr, const std::vector<int>& classes,
                       const CamNormStats* pinned = nullptr);

/// Single-image Grad-CAM at native resolution (minmax normalized).
SaliencyMap grad_cam(const Model& model, const LabeledImage& image, int target_class);

/// Element-wise grad_cam over a batch; order preserved.
std::vector<SaliencyMap> batch_grad_cam(const Model& model,
                                        const std::vector<DecoyInstance>& instances,
                                        const std::vector<int>& target_classes,
                                        int batch_size = 64);

/// Bilinear upsample of a native map to (h, w), clipped to [0,1].
SaliencyMap upsample(const SaliencyMap& map, int h, int w);

}  // namespace xbld
