#pragma once

#include <vector>

#include "xbld/autodiff.hpp"

namespace xbld::ad {

// Elementwise (same shape).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divv(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var expv(const Var& a);
Var logv(const Var& a);

// Matrix products, row-major 2-D operands.
Var matmul(const Var& a, const Var& b);     // [m,k]*[k,n]
Var matmul_nt(const Var& a, const Var& b);  // [m,k]*[n,k]^T
Var matmul_tn(const Var& a, const Var& b);  // [k,m]^T*[k,n]

// Row/column helpers.
Var bias_add(const Var& x, const Var& b);      // [M,K]+[K]
Var col_sum(const Var& x);                     // [M,K]->[K]
Var tile_rows(const Var& v, int rows);         // [K]->[rows,K]
Var row_sum(const Var& x);                     // [N,M]->[N]
Var row_broadcast(const Var& v, int cols);     // [N]->[N,cols]
Var rows_scale(const Var& x, Tensor coeff);    // x[i,...] *= coeff[i] (const)
Var gather_label(const Var& z, std::vector<int> idx);  // [N,K]->[N]

Var reshape(const Var& x, std::vector<int> shape);
Var sum_all(const Var& x);                                 // -> [1]
Var tile_expand(const Var& s, const std::vector<int>& shape);  // [1] -> shape

// Convolution plumbing (NHWC, stride 1, square kernel).
Var im2col(const Var& x, int kh, int kw, int pad);
Var col2im(const Var& col, int n, int h, int w, int c, int kh, int kw, int pad);
Var maxpool2(const Var& x);  // [N,H,W,C] -> [N,H/2,W/2,C], even H and W

// Saliency family on NHWC feature maps.
Var spatial_sum(const Var& x);                        // [N,H,W,K]->[N,K]
Var spatial_bcast(const Var& w, int h, int wd);       // [N,K]->[N,H,W,K]
Var channel_weighted_sum(const Var& a, const Var& w); // -> [N,H,W]
Var outer_spatial(const Var& s, const Var& w);        // -> [N,H,W,K]
Var spatial_dot(const Var& a, const Var& s);          // -> [N,K]

// Numerically stable per-row log-sum-exp of a [N,K] matrix.
Var logsumexp_rows(const Var& z);

}  // namespace xbld::ad
