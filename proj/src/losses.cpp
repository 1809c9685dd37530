#include "xbld/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "xbld/errors.hpp"
#include "xbld/ops.hpp"

namespace xbld {

BinaryMask align_mask_to_grid(const BinaryMask& mask, int hs, int ws) {
  const int h = mask.h(), w = mask.w();
  if (hs > h || ws > w) throw ValueError("align_mask_to_grid: upsampling is not supported");
  if (hs <= 0 || ws <= 0) throw ValueError("align_mask_to_grid: grid must be positive");
  BinaryMask out = BinaryMask::zeros(hs, ws);
  const double sy = static_cast<double>(h) / hs;
  const double sx = static_cast<double>(w) / ws;
  for (int gy = 0; gy < hs; ++gy) {
    const double y0 = gy * sy, y1 = (gy + 1) * sy;
    for (int gx = 0; gx < ws; ++gx) {
      const double x0 = gx * sx, x1 = (gx + 1) * sx;
      double covered = 0.0, area = 0.0;
      for (int py = static_cast<int>(y0); py < h && py < y1; ++py) {
        const double wy = std::min<double>(py + 1, y1) - std::max<double>(py, y0);
        if (wy <= 0) continue;
        for (int px = static_cast<int>(x0); px < w && px < x1; ++px) {
          const double wx = std::min<double>(px + 1, x1) - std::max<double>(px, x0);
          if (wx <= 0) continue;
          area += wy * wx;
          covered += wy * wx * mask.values[static_cast<size_t>(py) * w + px];
        }
      }
      out.values[static_cast<size_t>(gy) * ws + gx] = (area > 0 && covered / area >= 0.5) ? 1.0 : 0.0;
    }
  }
  return out;
}

IntersectionSet intersect(const Tensor& expl_native, const BinaryMask& con_mask_grid, double eps) {
  if (expl_native.ndim() != 2 || expl_native.dim(0) != con_mask_grid.h() ||
      expl_native.dim(1) != con_mask_grid.w())
    throw ShapeError("intersect: explanation and mask grids must match");
  IntersectionSet out;
  const int hs = con_mask_grid.h(), ws = con_mask_grid.w();
  for (int y = 0; y < hs; ++y) {
    for (int x = 0; x < ws; ++x) {
      const size_t p = static_cast<size_t>(y) * ws + x;
      if (con_mask_grid.values[p] != 0.0 && expl_native[p] > eps) {
        out.coords.emplace_back(y, x);
        out.activations.push_back(expl_native[p]);
      }
    }
  }
  return out;
}

double distance_score(const IntersectionSet& inter, std::pair<double, double> g,
                      double grid_diag) {
  if (grid_diag <= 0) throw ValueError("distance_score: grid diagonal must be positive");
  if (inter.coords.empty()) return 0.0;
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = 0.0;
  for (const auto& [r, c] : inter.coords) {
    const double d = std::hypot(r - g.first, c - g.second);
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  return (dmin + dmax) / 2.0 / grid_diag;
}

BatchAnnotations BatchAnnotations::from_instances(const std::vector<DecoyInstance>& instances,
                                                  const std::vector<int>& indices, int grid_h,
                                                  int grid_w) {
  BatchAnnotations ann;
  ann.grid_h = grid_h;
  ann.grid_w = grid_w;
  for (int idx : indices) {
    const auto& inst = instances[static_cast<size_t>(idx)];
    ann.labels.push_back(inst.image.label);
    ann.con_grid.push_back(align_mask_to_grid(inst.con_mask, grid_h, grid_w));
    ann.avoid_input.push_back(inst.con_mask);
    BinaryMask obj_grid = align_mask_to_grid(inst.obj_mask, grid_h, grid_w);
    if (obj_grid.empty()) {
      ann.centroids.emplace_back(std::nullopt);
      ++ann.skipped;
    } else {
      ann.centroids.emplace_back(centroid(obj_grid));
    }
  }
  return ann;
}

namespace {

/// Masked per-instance activation mass: [B] graph node with
/// S_n = sum over con-grid support of cam_n.
ad::Var confounder_mass(const ad::Var& cam, const BatchAnnotations& ann) {
  const int b = cam->value.dim(0), hs = cam->value.dim(1), ws = cam->value.dim(2);
  Tensor mask({b, hs, ws});
  const size_t cells = static_cast<size_t>(hs) * ws;
  for (int n = 0; n < b; ++n)
    for (size_t i = 0; i < cells; ++i)
      mask[static_cast<size_t>(n) * cells + i] = ann.con_grid[static_cast<size_t>(n)].values[i];
  ad::Var masked = ad::mul(cam, ad::constant(std::move(mask)));
  return ad::row_sum(ad::reshape(masked, {b, hs * ws}));
}

void check_finite(const Tensor& t, const char* what) {
  for (size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) throw NumericError(std::string(what) + " is non-finite");
}

BatchAnnotations annotations_for(const Model& model, const std::vector<DecoyInstance>& batch) {
  std::vector<int> idx(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) idx[i] = static_cast<int>(i);
  return BatchAnnotations::from_instances(batch, idx, model.spec.feature_h(),
                                          model.spec.feature_w());
}

}  // namespace

ExplLossResult xbl_d_expl_loss(const ForwardResult& fr, const BatchAnnotations& ann, double eps,
                               const CamNormStats* pinned) {
  const int b = fr.features->value.dim(0);
  if (static_cast<int>(ann.labels.size()) != b)
    throw ShapeError("xbl_d_expl_loss: annotation batch mismatch");

  ad::Var cam = grad_cam_graph(fr, ann.labels, pinned);
  check_finite(cam->value, "grad-cam activation");
  const int hs = cam->value.dim(1), ws = cam->value.dim(2);
  const double grid_diag = std::hypot(hs - 1, ws - 1);

  // Distance weights are constants w.r.t. theta: the distance itself is
  // piecewise constant in the parameters, so the differentiable carrier is
  // the activation mass and the distance scales it.
  Tensor dweights({b});
  int contributing = 0;
  for (int n = 0; n < b; ++n) {
    if (!ann.centroids[static_cast<size_t>(n)]) {
      dweights[static_cast<size_t>(n)] = 0.0;  // skipped: empty object mask
      continue;
    }
    ++contributing;
    Tensor expl_n({hs, ws});
    const size_t cells = static_cast<size_t>(hs) * ws;
    std::copy(cam->value.data() + static_cast<size_t>(n) * cells,
              cam->value.data() + static_cast<size_t>(n + 1) * cells, expl_n.data());
    IntersectionSet inter = intersect(expl_n, ann.con_grid[static_cast<size_t>(n)], eps);
    dweights[static_cast<size_t>(n)] =
        distance_score(inter, *ann.centroids[static_cast<size_t>(n)], grid_diag);
  }

  ExplLossResult out;
  out.n_contributing = contributing;
  ad::Var mass = confounder_mass(cam, ann);                       // [B]
  ad::Var terms = ad::rows_scale(mass, dweights);                 // [B]
  const double denom = contributing > 0 ? static_cast<double>(contributing) : 1.0;
  out.loss = ad::scale(ad::sum_all(terms), 1.0 / denom);
  out.per_instance.resize(static_cast<size_t>(b));
  for (int n = 0; n < b; ++n) out.per_instance[static_cast<size_t>(n)] = terms->value[static_cast<size_t>(n)];
  check_finite(out.loss->value, "xbl_d explanation loss");
  return out;
}

ExplLossResult xbl_d_expl_loss(const Model& model, const std::vector<DecoyInstance>& batch,
                               double eps) {
  BatchAnnotations ann = annotations_for(model, batch);
  if (ann.skipped > 0)
    std::fprintf(stderr, "[xbl_d] warning: %d instance(s) skipped (empty object mask)\n",
                 ann.skipped);
  Tensor x = make_batch(batch, [&] {
    std::vector<int> idx(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) idx[i] = static_cast<int>(i);
    return idx;
  }());
  ForwardResult fr = forward_with_features(model, x, /*train=*/true);
  return xbl_d_expl_loss(fr, ann, eps);
}

ad::Var weight_squares(const std::vector<ad::Var>& param_vars) {
  ad::Var acc;
  for (const auto& p : param_vars) {
    ad::Var sq = ad::sum_all(ad::mul(p, p));
    acc = acc ? ad::add(acc, sq) : sq;
  }
  if (!acc) throw ValueError("weight_squares: no parameters");
  return acc;
}

CombinedLoss combined_loss(const ForwardResult& fr, const BatchAnnotations& ann,
                           const LossCoefficients& coeffs, double eps,
                           const CamNormStats* pinned) {
  if (coeffs.lambda1 < 0 || coeffs.lambda2 < 0 || coeffs.lambda < 0)
    throw ValueError("combined_loss: coefficients must be nonnegative");

  ad::Var ce = cross_entropy(fr.logits, ann.labels);
  ExplLossResult expl = xbl_d_expl_loss(fr, ann, eps, pinned);
  ad::Var reg = weight_squares(fr.param_vars);
  ad::Var total = ad::add(ad::add(ad::scale(ce, coeffs.lambda1), ad::scale(expl.loss, coeffs.lambda2)),
                          ad::scale(reg, coeffs.lambda));

  CombinedLoss out;
  out.total = total;
  out.breakdown.ce = ce->value[0];
  out.breakdown.expl = expl.loss->value[0];
  out.breakdown.reg = reg->value[0];
  out.breakdown.total = total->value[0];
  out.breakdown.lambda1 = coeffs.lambda1;
  out.breakdown.lambda2 = coeffs.lambda2;
  out.breakdown.lambda = coeffs.lambda;
  out.breakdown.per_instance_expl = std::move(expl.per_instance);
  if (!std::isfinite(out.breakdown.total)) throw NumericError("combined loss is non-finite");
  return out;
}

CombinedLoss combined_loss(const Model& model, const std::vector<DecoyInstance>& batch,
                           const LossCoefficients& coeffs, double eps) {
  BatchAnnotations ann = annotations_for(model, batch);
  std::vector<int> idx(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) idx[i] = static_cast<int>(i);
  Tensor x = make_batch(batch, idx);
  ForwardResult fr = forward_with_features(model, x, /*train=*/true);
  return combined_loss(fr, ann, coeffs, eps);
}

ad::Var rrr_expl_loss(const ForwardResult& fr, const std::vector<BinaryMask>& avoid_masks) {
  if (!fr.input->requires_grad)
    throw ValueError("rrr_expl_loss: forward pass must be built with input_grad=true");
  const int b = fr.input->value.dim(0);
  const int h = fr.input->value.dim(1), w = fr.input->value.dim(2), c = fr.input->value.dim(3);
  if (static_cast<int>(avoid_masks.size()) != b)
    throw ShapeError("rrr_expl_loss: one avoid mask per batch row required");

  // sum_k log yhat_nk = sum_k z_nk - K * logsumexp(z_n)
  const int k = fr.logits->value.dim(1);
  ad::Var row_log_probs =
      ad::sub(ad::row_sum(fr.logits), ad::scale(ad::logsumexp_rows(fr.logits), k));
  ad::Var total_log_prob = ad::sum_all(row_log_probs);
  ad::Var dx = ad::grad(total_log_prob, {fr.input})[0];  // [B,H,W,C]
  check_finite(dx->value, "rrr input gradient");

  Tensor mask({b, h, w, c});
  for (int n = 0; n < b; ++n) {
    const auto& m = avoid_masks[static_cast<size_t>(n)];
    if (m.h() != h || m.w() != w) throw ShapeError("rrr_expl_loss: mask at input resolution required");
    for (int p = 0; p < h * w; ++p)
      for (int ch = 0; ch < c; ++ch)
        mask[(static_cast<size_t>(n) * h * w + p) * c + ch] = m.values[static_cast<size_t>(p)];
  }
  ad::Var gated = ad::mul(dx, ad::constant(std::move(mask)));
  return ad::sum_all(ad::mul(gated, gated));
}

ad::Var rrr_expl_loss(const Model& model, const std::vector<DecoyInstance>& batch) {
  std::vector<int> idx(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) idx[i] = static_cast<int>(i);
  Tensor x = make_batch(batch, idx);
  ForwardResult fr = forward_with_features(model, x, /*train=*/true, /*input_grad=*/true);
  std::vector<BinaryMask> masks;
  for (const auto& inst : batch) masks.push_back(inst.con_mask);
  return rrr_expl_loss(fr, masks);
}

ExplLossResult rrr_g_expl_loss(const ForwardResult& fr, const BatchAnnotations& ann,
                               const CamNormStats* pinned) {
  const int b = fr.features->value.dim(0);
  if (static_cast<int>(ann.labels.size()) != b)
    throw ShapeError("rrr_g_expl_loss: annotation batch mismatch");
  ad::Var cam = grad_cam_graph(fr, ann.labels, pinned);
  check_finite(cam->value, "grad-cam activation");
  ad::Var mass = confounder_mass(cam, ann);  // [B]
  ExplLossResult out;
  out.loss = ad::sum_all(mass);  // this variant keeps the plain sum reduction
  out.n_contributing = b;
  out.per_instance.resize(static_cast<size_t>(b));
  for (int n = 0; n < b; ++n) out.per_instance[static_cast<size_t>(n)] = mass->value[static_cast<size_t>(n)];
  return out;
}

ExplLossResult rrr_g_expl_loss(const Model& model, const std::vector<DecoyInstance>& batch) {
  BatchAnnotations ann = annotations_for(model, batch);
  std::vector<int> idx(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) idx[i] = static_cast<int>(i);
  Tensor x = make_batch(batch, idx);
  ForwardResult fr = forward_with_features(model, x, /*train=*/true);
  return rrr_g_expl_loss(fr, ann);
}

}  // namespace xbld
