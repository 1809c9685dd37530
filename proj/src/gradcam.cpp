#include "xbld/gradcam.hpp"

#include <algorithm>
#include <cmath>

#include "xbld/errors.hpp"
#include "xbld/image.hpp"
#include "xbld/ops.hpp"

namespace xbld {

CamNormStats compute_cam_stats(const Tensor& cam_raw) {
  if (cam_raw.ndim() != 3) throw ShapeError("compute_cam_stats: need [B,Hs,Ws]");
  const int b = cam_raw.dim(0);
  const size_t cells = static_cast<size_t>(cam_raw.dim(1)) * cam_raw.dim(2);
  CamNormStats st;
  st.shift.resize(static_cast<size_t>(b));
  st.inv_range.resize(static_cast<size_t>(b));
  st.flat_positive.resize(static_cast<size_t>(b));
  for (int n = 0; n < b; ++n) {
    const double* row = cam_raw.data() + static_cast<size_t>(n) * cells;
    double lo = row[0], hi = row[0];
    for (size_t i = 1; i < cells; ++i) {
      lo = std::min(lo, row[i]);
      hi = std::max(hi, row[i]);
    }
    const double range = hi - lo;
    st.shift[static_cast<size_t>(n)] = lo;
    st.inv_range[static_cast<size_t>(n)] = range > 0.0 ? 1.0 / range : 0.0;
    st.flat_positive[static_cast<size_t>(n)] = range <= 0.0 && hi > 0.0;
  }
  return st;
}

ad::Var normalize_cam(const ad::Var& cam_raw, const CamNormStats& stats) {
  const int b = cam_raw->value.dim(0);
  const int hs = cam_raw->value.dim(1), ws = cam_raw->value.dim(2);
  if (static_cast<int>(stats.shift.size()) != b)
    throw ShapeError("normalize_cam: stats batch mismatch");

  Tensor shift({b, hs, ws});
  const size_t cells = static_cast<size_t>(hs) * ws;
  bool any_flat_positive = false;
  for (int n = 0; n < b; ++n) {
    for (size_t i = 0; i < cells; ++i)
      shift[static_cast<size_t>(n) * cells + i] = stats.shift[static_cast<size_t>(n)];
    any_flat_positive = any_flat_positive || stats.flat_positive[static_cast<size_t>(n)];
  }
  Tensor inv({b});
  for (int n = 0; n < b; ++n) inv[static_cast<size_t>(n)] = stats.inv_range[static_cast<size_t>(n)];

  ad::Var out = ad::rows_scale(ad::sub(cam_raw, ad::constant(std::move(shift))), inv);
  if (any_flat_positive) {
    Tensor ones = Tensor::zeros({b, hs, ws});
    for (int n = 0; n < b; ++n)
      if (stats.flat_positive[static_cast<size_t>(n)])
        for (size_t i = 0; i < cells; ++i) ones[static_cast<size_t>(n) * cells + i] = 1.0;
    out = ad::add(out, ad::constant(std::move(ones)));
  }
  return out;
}

ad::Var grad_cam_graph(const ForwardResult& fr, const std::vector<int>& classes,
                       const CamNormStats* pinned) {
  if (!fr.features) throw ValueError("grad_cam: model exposes no conv feature maps");
  const int b = fr.features->value.dim(0);
  const int hs = fr.features->value.dim(1), ws = fr.features->value.dim(2);
  if (static_cast<int>(classes.size()) != b)
    throw ShapeError("grad_cam: one target class per batch row required");

  // Instance n's logit depends only on features[n], so one backward pass of
  // the summed gathered logits yields every per-instance gradient at once.
  ad::Var class_logits = ad::gather_label(fr.logits, classes);  // [B]
  ad::Var summed = ad::sum_all(class_logits);
  ad::Var dfeat = ad::grad(summed, {fr.features})[0];           // [B,Hs,Ws,K]
  ad::Var alpha = ad::scale(ad::spatial_sum(dfeat), 1.0 / (hs * ws));  // [B,K]
  ad::Var cam_raw = ad::relu(ad::channel_weighted_sum(fr.features, alpha));  // [B,Hs,Ws]

  if (pinned) return normalize_cam(cam_raw, *pinned);
  return normalize_cam(cam_raw, compute_cam_stats(cam_raw->value));
}

SaliencyMap grad_cam(const Model& model, const LabeledImage& image, int target_class) {
  if (model.spec.conv_blocks.empty())
    throw ValueError("grad_cam: architecture has no convolutional layers");
  if (target_class < 0 || target_class >= model.spec.num_classes)
    throw ValueError("grad_cam: target class out of range");
  Tensor batch({1, image.h(), image.w(), image.c()});
  std::copy(image.pixels.data(), image.pixels.data() + image.pixels.numel(), batch.data());
  // Gradients w.r.t. features require grad-tracking parameters even though
  // no parameter update happens here.
  ForwardResult fr = forward_with_features(model, batch, /*train=*/true);
  ad::Var cam = grad_cam_graph(fr, {target_class});
  SaliencyMap out;
  out.values = Tensor({cam->value.dim(1), cam->value.dim(2)});
  std::copy(cam->value.data(), cam->value.data() + out.values.numel(), out.values.data());
  out.normalization = SaliencyMap::Norm::minmax;
  out.target_class = target_class;
  out.resolution_tag = SaliencyMap::Resolution::native;
  return out;
}

std::vector<SaliencyMap> batch_grad_cam(const Model& model,
                                        const std::vector<DecoyInstance>& instances,
                                        const std::vector<int>& target_classes,
                                        int batch_size) {
  if (instances.size() != target_classes.size())
    throw ShapeError("batch_grad_cam: one class per instance required");
  if (model.spec.conv_blocks.empty())
    throw ValueError("batch_grad_cam: architecture has no convolutional layers");
  std::vector<SaliencyMap> out;
  out.reserve(instances.size());
  for (size_t start = 0; start < instances.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(instances.size(), start + static_cast<size_t>(batch_size));
    std::vector<int> idx, classes;
    for (size_t i = start; i < end; ++i) {
      idx.push_back(static_cast<int>(i));
      classes.push_back(target_classes[i]);
    }
    Tensor batch = make_batch(instances, idx);
    ForwardResult fr = forward_with_features(model, batch, /*train=*/true);
    ad::Var cam = grad_cam_graph(fr, classes);
    const int hs = cam->value.dim(1), ws = cam->value.dim(2);
    const size_t cells = static_cast<size_t>(hs) * ws;
    for (size_t i = 0; i < idx.size(); ++i) {
      SaliencyMap m;
      m.values = Tensor({hs, ws});
      std::copy(cam->value.data() + i * cells, cam->value.data() + (i + 1) * cells,
                m.values.data());
      m.normalization = SaliencyMap::Norm::minmax;
      m.target_class = classes[i];
      m.resolution_tag = SaliencyMap::Resolution::native;
      out.push_back(std::move(m));
    }
  }
  return out;
}

SaliencyMap upsample(const SaliencyMap& map, int h, int w) {
  if (map.resolution_tag != SaliencyMap::Resolution::native)
    throw ValueError("upsample: map is already at input resolution");
  if (h < map.values.dim(0) || w < map.values.dim(1))
    throw ValueError("upsample: target must not be smaller than the source map");
  SaliencyMap out;
  out.values = resize_bilinear(map.values, h, w);
  for (size_t i = 0; i < out.values.numel(); ++i)
    out.values[i] = std::clamp(out.values[i], 0.0, 1.0);
  out.normalization = map.normalization;
  out.target_class = map.target_class;
  out.resolution_tag = SaliencyMap::Resolution::input;
  return out;
}

}  // namespace xbld
