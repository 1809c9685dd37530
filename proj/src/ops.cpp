#include "xbld/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "xbld/kernels.hpp"

namespace xbld::ad {
namespace {

const kern::Kernels& K() { return kern::active(); }

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Var make(Tensor value, std::vector<Var> parents, const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->op = op;
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

size_t trailing(const Tensor& t) { return t.dim(0) == 0 ? 0 : t.numel() / static_cast<size_t>(t.dim(0)); }

}  // namespace

Var add(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out(a->value.shape());
  K().add(a->value.data(), b->value.data(), out.data(), out.numel());
  auto n = make(std::move(out), {a, b}, "add");
  if (n->requires_grad)
    n->vjp = [](const Var& g, std::vector<Var>& pg) {
      pg[0] = g;
      pg[1] = g;
    };
  return n;
}

Var sub(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out(a->value.shape());
  K().sub(a->value.data(), b->value.data(), out.data(), out.numel());
  auto n = make(std::move(out), {a, b}, "sub");
  if (n->requires_grad)
    n->vjp = [](const Var& g, std::vector<Var>& pg) {
      pg[0] = g;
      pg[1] = neg(g);
    };
  return n;
}

Var mul(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out(a->value.shape());
  K().mul(a->value.data(), b->value.data(), out.data(), out.numel());
  auto n = make(std::move(out), {a, b}, "mul");
  if (n->requires_grad)
    n->vjp = [a, b](const Var& g, std::vector<Var>& pg) {
      pg[0] = mul(g, b);
      pg[1] = mul(g, a);
    };
  return n;
}

Var divv(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "div: shape mismatch");
  Tensor out(a->value.shape());
  K().div(a->value.data(), b->value.data(), out.data(), out.numel());
  auto n = make(std::move(out), {a, b}, "div");
  if (n->requires_grad) {
    std::weak_ptr<Node> self = n;
    n->vjp = [a, b, self](const Var& g, std::vector<Var>& pg) {
      pg[0] = divv(g, b);
      Var out_var = self.lock();
      pg[1] = neg(divv(mul(g, out_var), b));  // -g*(a/b)/b
    };
  }
  return n;
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  K().scale(a->value.data(), s, out.data(), out.numel());
  auto n = make(std::move(out), {a}, "scale");
  if (n->requires_grad)
    n->vjp = [s](const Var& g, std::vector<Var>& pg) { pg[0] = scale(g, s); };
  return n;
}

Var relu(const Var& a) {
  Tensor out(a->value.shape());
  K().relu(a->value.data(), out.data(), out.numel());
  auto n = make(std::move(out), {a}, "relu");
  if (n->requires_grad) {
    Tensor mask(a->value.shape());
    K().step_mask(a->value.data(), mask.data(), mask.numel());
    Var mask_c = constant(std::move(mask));
    n->vjp = [mask_c](const Var& g, std::vector<Var>& pg) { pg[0] = mul(g, mask_c); };
  }
  return n;
}

Var expv(const Var& a) {
  Tensor out(a->value.shape());
  const double* src = a->value.data();
  double* dst = out.data();
  for (size_t i = 0; i < out.numel(); ++i) dst[i] = std::exp(src[i]);
  auto n = make(std::move(out), {a}, "exp");
  if (n->requires_grad) {
    std::weak_ptr<Node> self = n;
    n->vjp = [self](const Var& g, std::vector<Var>& pg) { pg[0] = mul(g, self.lock()); };
  }
  return n;
}

Var logv(const Var& a) {
  Tensor out(a->value.shape());
  const double* src = a->value.data();
  double* dst = out.data();
  for (size_t i = 0; i < out.numel(); ++i) dst[i] = std::log(src[i]);
  auto n = make(std::move(out), {a}, "log");
  if (n->requires_grad)
    n->vjp = [a](const Var& g, std::vector<Var>& pg) { pg[0] = divv(g, a); };
  return n;
}

Var matmul(const Var& a, const Var& b) {
  check(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul: need 2-D");
  const int m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
  check(b->value.dim(0) == k, "matmul: inner dims differ");
  Tensor out({m, n2});
  K().gemm(kern::Trans::no, kern::Trans::no, m, n2, k, a->value.data(), k,
           b->value.data(), n2, out.data(), n2, false);
  auto n = make(std::move(out), {a, b}, "matmul");
  if (n->requires_grad)
    n->vjp = [a, b](const Var& g, std::vector<Var>& pg) {
      pg[0] = matmul_nt(g, b);  // [m,n]*[k,n]^T
      pg[1] = matmul_tn(a, g);  // [m,k]^T*[m,n]
    };
  return n;
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul_nt: need 2-D");
  const int m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(0);
  check(b->value.dim(1) == k, "matmul_nt: inner dims differ");
  Tensor out({m, n2});
  K().gemm(kern::Trans::no, kern::Trans::yes, m, n2, k, a->value.data(), k,
           b->value.data(), k, out.data(), n2, false);
  auto n = make(std::move(out), {a, b}, "matmul_nt");
  if (n->requires_grad)
    n->vjp = [a, b](const Var& g, std::vector<Var>& pg) {
      pg[0] = matmul(g, b);     // [m,n2]*[n2,k]
      pg[1] = matmul_tn(g, a);  // [m,n2]^T*[m,k]
    };
  return n;
}

Var matmul_tn(const Var& a, const Var& b) {
  check(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul_tn: need 2-D");
  const int k = a->value.dim(0), m = a->value.dim(1), n2 = b->value.dim(1);
  check(b->value.dim(0) == k, "matmul_tn: inner dims differ");
  Tensor out({m, n2});
  K().gemm(kern::Trans::yes, kern::Trans::no, m, n2, k, a->value.data(), m,
           b->value.data(), n2, out.data(), n2, false);
  auto n = make(std::move(out), {a, b}, "matmul_tn");
  if (n->requires_grad)
    n->vjp = [a, b](const Var& g, std::vector<Var>& pg) {
      pg[0] = matmul_nt(b, g);  // [k,n2]*[m,n2]^T -> [k,m]
      pg[1] = matmul(a, g);     // [k,m]*[m,n2]
    };
  return n;
}

Var bias_add(const Var& x, const Var& b) {
  check(x->value.ndim() == 2 && b->value.ndim() == 1, "bias_add: want [M,K]+[K]");
  const int m = x->value.dim(0), k = x->value.dim(1);
  check(b->value.dim(0) == k, "bias_add: width mismatch");
  Tensor out({m, k});
  for (int i = 0; i < m; ++i)
    K().add(x->value.data() + static_cast<size_t>(i) * k, b->value.data(),
            out.data() + static_cast<size_t>(i) * k, static_cast<size_t>(k));
  auto n = make(std::move(out), {x, b}, "bias_add");
  if (n->requires_grad)
    n->vjp = [](const Var& g, std::vector<Var>& pg) {
      pg[0] = g;
      pg[1] = col_sum(g);
    };
  return n;
}

Var col_sum(const Var& x) {
  check(x->value.ndim() == 2, "col_sum: need 2-D");
  const int m = x->value.dim(0), k = x->value.dim(1);
  Tensor out = Tensor::zeros({k});
  for (int i = 0; i < m; ++i)
    K().axpy(1.0, x->value.data() + static_cast<size_t>(i) * k, out.data(),
             static_cast<size_t>(k));
  auto n = make(std::move(out), {x}, "col_sum");
  if (n->requires_grad)
    n->vjp = [m](const Var& g, std::vector<Var>& pg) { pg[0] = tile_rows(g, m); };
  return n;
}

Var tile_rows(const Var& v, int rows) {
  check(v->value.ndim() == 1, "tile_rows: need 1-D");
  const int k = v->value.dim(0);
  Tensor out({rows, k});
  for (int i = 0; i < rows; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * k, v->value.data(),
                sizeof(double) * static_cast<size_t>(k));
  auto n = make(std::move(out), {v}, "tile_rows");
  if (n->requires_grad)
    n->vjp = [](const Var& g, std::vector<Var>& pg) { pg[0] = col_sum(g); };
  return n;
}

Var row_sum(const Var& x) {
  check(x->value.ndim() >= 2, "row_sum: need >=2-D");
  const int rows = x->value.dim(0);
  const size_t cols = trailing(x->value);
  Tensor out({rows});
  for (int i = 0; i < rows; ++i)
    out[static_cast<size_t>(i)] = K().sum(x->value.data() + static_cast<size_t>(i) * cols, cols);
  auto n = make(std::move(out), {x}, "row_sum");
  if (n->requires_grad) {
    auto shape = x->value.shape();
    const int ncols = static_cast<int>(cols);
    n->vjp = [shape, ncols](const Var& g, std::vector<Var>& pg) {
      pg[0] = reshape(row_broadcast(g, ncols), shape);
    };
  }
  return n;
}

Var row_broadcast(const Var& v, int cols) {
  check(v->value.ndim() == 1, "row_broadcast: need 1-D");
  const int rows = v->value.dim(0);
  Tensor out({rows, cols});
  for (int i = 0; i < rows; ++i) {
    double* dst = out.data() + static_cast<size_t>(i) * cols;
    const double val = v->value[static_cast<size_t>(i)];
    for (int j = 0; j < cols; ++j) dst[j] = val;
  }
  auto n = make(std::move(out), {v}, "row_broadcast");
  if (n->requires_grad)
    n->vjp = [](const Var& g, std::vector<Var>& pg) { pg[0] = row_sum(g); };
  return n;
}

Var rows_scale(const Var& x, Tensor coeff) {
  check(x->value.ndim() >= 1 && coeff.ndim() == 1, "rows_scale: bad ranks");
  const int rows = x->value.dim(0);
  check(coeff.dim(0) == rows, "rows_scale: coeff length mismatch");
  const size_t cols = trailing(x->value);
  Tensor out(x->value.shape());
  for (int i = 0; i < rows; ++i)
    K().scale(x->value.data() + static_cast<size_t>(i) * cols, coeff[static_cast<size_t>(i)],
              out.data() + static_cast<size_t>(i) * cols, cols);
  auto n = make(std::move(out), {x}, "rows_scale");
  if (n->requires_grad) {
    Tensor c = coeff.clone();
    n->vjp = [c](const Var& g, std::vector<Var>& pg) { pg[0] = rows_scale(g, c); };
  }
  return n;
}

namespace {

Var scatter_label(const Var& g, std::shared_ptr<const std::vector<int>> idx, int k);

Var gather_label_impl(const Var& z, std::shared_ptr<const std::vector<int>> idx) {
  const int rows = z->value.dim(0), k = z->value.dim(1);
  check(static_cast<int>(idx->size()) == rows, "gather_label: index length mismatch");
  Tensor out({rows});
  for (int i = 0; i < rows; ++i) {
    const int c = (*idx)[static_cast<size_t>(i)];
    check(c >= 0 && c < k, "gather_label: class out of range");
    out[static_cast<size_t>(i)] = z->value[static_cast<size_t>(i) * k + c];
  }
  auto n = make(std::move(out), {z}, "gather_label");
  if (n->requires_grad)
    n->vjp = [idx, k](const Var& g, std::vector<Var>& pg) { pg[0] = scatter_label(g, idx, k); };
  return n;
}

Var scatter_label(const Var& g, std::shared_ptr<const std::vector<int>> idx, int k) {
  const int rows = g->value.dim(0);
  Tensor out = Tensor::zeros({rows, k});
  for (int i = 0; i < rows; ++i)
    out[static_cast<size_t>(i) * k + (*idx)[static_cast<size_t>(i)]] = g->value[static_cast<size_t>(i)];
  auto n = make(std::move(out), {g}, "scatter_label");
  if (n->requires_grad)
    n->vjp = [idx](const Var& gg, std::vector<Var>& pg) { pg[0] = gather_label_impl(gg, idx); };
  return n;
}

}  // namespace

Var gather_label(const Var& z, std::vector<int> idx) {
  check(z->value.ndim() == 2, "gather_label: need [N,K]");
  return gather_label_impl(z, std::make_shared<const std::vector<int>>(std::move(idx)));
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out = x->value.reshaped(shape);
  auto n = make(std::move(out), {x}, "reshape");
  if (n->requires_grad) {
    auto back = x->value.shape();
    n->vjp = [back](const Var& g, std::vector<Var>& pg) { pg[0] = reshape(g, back); };
  }
  return n;
}

Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(K().sum(x->value.data(), x->value.numel()));
  auto n = make(std::move(out), {x}, "sum_all");
  if (n->requires_grad) {
    auto shape = x->value.shape();
    n->vjp = [shape](const Var& g, std::vector<Var>& pg) { pg[0] = tile_expand(g, shape); };
  }
  return n;
}

Var tile_expand(const Var& s, const std::vector<int>& shape) {
  check(s->value.numel() == 1, "tile_expand: need scalar");
  Tensor out = Tensor::full(shape, s->value[0]);
  auto n = make(std::move(out), {s}, "tile_expand");
  if (n->requires_grad)
    n->vjp = [](const Var& g, std::vector<Var>& pg) { pg[0] = sum_all(g); };
  return n;
}

Var im2col(const Var& x, int kh, int kw, int pad) {
  check(x->value.ndim() == 4, "im2col: need NHWC");
  const int n0 = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
  const int oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  check(oh > 0 && ow > 0, "im2col: kernel larger than padded input");
  Tensor out({n0 * oh * ow, kh * kw * c});
  const double* src = x->value.data();
  double* dst = out.data();
  const size_t row_len = static_cast<size_t>(kh) * kw * c;
  for (int ni = 0; ni < n0; ++ni) {
    const double* img = src + static_cast<size_t>(ni) * h * w * c;
    for (int y = 0; y < oh; ++y) {
      for (int xo = 0; xo < ow; ++xo) {
        double* r = dst + ((static_cast<size_t>(ni) * oh + y) * ow + xo) * row_len;
        for (int dy = 0; dy < kh; ++dy) {
          const int sy = y + dy - pad;
          double* tap = r + static_cast<size_t>(dy) * kw * c;
          if (sy < 0 || sy >= h) {
            std::memset(tap, 0, sizeof(double) * static_cast<size_t>(kw) * c);
            continue;
          }
          for (int dx = 0; dx < kw; ++dx) {
            const int sx = xo + dx - pad;
            if (sx < 0 || sx >= w) {
              std::memset(tap + static_cast<size_t>(dx) * c, 0, sizeof(double) * c);
            } else {
              std::memcpy(tap + static_cast<size_t>(dx) * c,
                          img + (static_cast<size_t>(sy) * w + sx) * c, sizeof(double) * c);
            }
          }
        }
      }
    }
  }
  auto node = make(std::move(out), {x}, "im2col");
  if (node->requires_grad)
    node->vjp = [n0, h, w, c, kh, kw, pad](const Var& g, std::vector<Var>& pg) {
      pg[0] = col2im(g, n0, h, w, c, kh, kw, pad);
    };
  return node;
}

Var col2im(const Var& col, int n0, int h, int w, int c, int kh, int kw, int pad) {
  const int oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  check(col->value.ndim() == 2 && col->value.dim(0) == n0 * oh * ow &&
            col->value.dim(1) == kh * kw * c,
        "col2im: column shape mismatch");
  Tensor out = Tensor::zeros({n0, h, w, c});
  const double* src = col->value.data();
  double* dst = out.data();
  const size_t row_len = static_cast<size_t>(kh) * kw * c;
  for (int ni = 0; ni < n0; ++ni) {
    double* img = dst + static_cast<size_t>(ni) * h * w * c;
    for (int y = 0; y < oh; ++y) {
      for (int xo = 0; xo < ow; ++xo) {
        const double* r = src + ((static_cast<size_t>(ni) * oh + y) * ow + xo) * row_len;
        for (int dy = 0; dy < kh; ++dy) {
          const int sy = y + dy - pad;
          if (sy < 0 || sy >= h) continue;
          for (int dx = 0; dx < kw; ++dx) {
            const int sx = xo + dx - pad;
            if (sx < 0 || sx >= w) continue;
            K().axpy(1.0, r + (static_cast<size_t>(dy) * kw + dx) * c,
                     img + (static_cast<size_t>(sy) * w + sx) * c, static_cast<size_t>(c));
          }
        }
      }
    }
  }
  auto node = make(std::move(out), {col}, "col2im");
  if (node->requires_grad)
    node->vjp = [kh, kw, pad](const Var& g, std::vector<Var>& pg) {
      pg[0] = im2col(g, kh, kw, pad);
    };
  return node;
}

namespace {

Var unpool2(const Var& g, std::shared_ptr<const std::vector<size_t>> idx,
            std::vector<int> in_shape);

Var pool_gather(const Var& x, std::shared_ptr<const std::vector<size_t>> idx,
                std::vector<int> out_shape) {
  Tensor out(out_shape);
  for (size_t o = 0; o < out.numel(); ++o) out[o] = x->value[(*idx)[o]];
  auto n = make(std::move(out), {x}, "pool_gather");
  if (n->requires_grad) {
    auto in_shape = x->value.shape();
    n->vjp = [idx, in_shape](const Var& g, std::vector<Var>& pg) {
      pg[0] = unpool2(g, idx, in_shape);
    };
  }
  return n;
}

Var unpool2(const Var& g, std::shared_ptr<const std::vector<size_t>> idx,
            std::vector<int> in_shape) {
  Tensor out = Tensor::zeros(in_shape);
  for (size_t o = 0; o < g->value.numel(); ++o) out[(*idx)[o]] += g->value[o];
  auto n = make(std::move(out), {g}, "unpool2");
  if (n->requires_grad) {
    auto out_shape = g->value.shape();
    n->vjp = [idx, out_shape](const Var& gg, std::vector<Var>& pg) {
      pg[0] = pool_gather(gg, idx, out_shape);
    };
  }
  return n;
}

}  // namespace

Var maxpool2(const Var& x) {
  check(x->value.ndim() == 4, "maxpool2: need NHWC");
  const int n0 = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
  check(h % 2 == 0 && w % 2 == 0, "maxpool2: spatial dims must be even");
  const int oh = h / 2, ow = w / 2;
  Tensor out({n0, oh, ow, c});
  auto idx = std::make_shared<std::vector<size_t>>(out.numel());
  const double* src = x->value.data();
  double* dst = out.data();
  size_t o = 0;
  for (int ni = 0; ni < n0; ++ni) {
    for (int y = 0; y < oh; ++y) {
      for (int xo = 0; xo < ow; ++xo) {
        for (int ch = 0; ch < c; ++ch, ++o) {
          const size_t base = ((static_cast<size_t>(ni) * h + 2 * y) * w + 2 * xo) * c + ch;
          size_t best = base;
          double bv = src[base];
          const size_t cands[3] = {base + c, base + static_cast<size_t>(w) * c,
                                   base + static_cast<size_t>(w) * c + c};
          for (size_t cd : cands) {
            if (src[cd] > bv) {
              bv = src[cd];
              best = cd;
            }
          }
          dst[o] = bv;
          (*idx)[o] = best;
        }
      }
    }
  }
  auto n = make(std::move(out), {x}, "maxpool2");
  if (n->requires_grad) {
    auto in_shape = x->value.shape();
    std::shared_ptr<const std::vector<size_t>> cidx = idx;
    n->vjp = [cidx, in_shape](const Var& g, std::vector<Var>& pg) {
      pg[0] = unpool2(g, cidx, in_shape);
    };
  }
  return n;
}

Var spatial_sum(const Var& x) {
  check(x->value.ndim() == 4, "spatial_sum: need [N,H,W,K]");
  const int n0 = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), k = x->value.dim(3);
  Tensor out = Tensor::zeros({n0, k});
  for (int ni = 0; ni < n0; ++ni) {
    double* dst = out.data() + static_cast<size_t>(ni) * k;
    const double* src = x->value.data() + static_cast<size_t>(ni) * h * w * k;
    for (int p = 0; p < h * w; ++p)
      K().axpy(1.0, src + static_cast<size_t>(p) * k, dst, static_cast<size_t>(k));
  }
  auto n = make(std::move(out), {x}, "spatial_sum");
  if (n->requires_grad)
    n->vjp = [h, w](const Var& g, std::vector<Var>& pg) { pg[0] = spatial_bcast(g, h, w); };
  return n;
}

Var spatial_bcast(const Var& wv, int h, int wd) {
  check(wv->value.ndim() == 2, "spatial_bcast: need [N,K]");
  const int n0 = wv->value.dim(0), k = wv->value.dim(1);
  Tensor out({n0, h, wd, k});
  for (int ni = 0; ni < n0; ++ni) {
    const double* src = wv->value.data() + static_cast<size_t>(ni) * k;
    double* base = out.data() + static_cast<size_t>(ni) * h * wd * k;
    for (int p = 0; p < h * wd; ++p)
      std::memcpy(base + static_cast<size_t>(p) * k, src, sizeof(double) * static_cast<size_t>(k));
  }
  auto n = make(std::move(out), {wv}, "spatial_bcast");
  if (n->requires_grad)
    n->vjp = [](const Var& g, std::vector<Var>& pg) { pg[0] = spatial_sum(g); };
  return n;
}

Var channel_weighted_sum(const Var& a, const Var& w) {
  check(a->value.ndim() == 4 && w->value.ndim() == 2, "channel_weighted_sum: bad ranks");
  const int n0 = a->value.dim(0), h = a->value.dim(1), wd = a->value.dim(2), k = a->value.dim(3);
  check(w->value.dim(0) == n0 && w->value.dim(1) == k, "channel_weighted_sum: weight shape");
  Tensor out({n0, h, wd});
  for (int ni = 0; ni < n0; ++ni) {
    const double* wrow = w->value.data() + static_cast<size_t>(ni) * k;
    const double* arow = a->value.data() + static_cast<size_t>(ni) * h * wd * k;
    double* dst = out.data() + static_cast<size_t>(ni) * h * wd;
    for (int p = 0; p < h * wd; ++p)
      dst[p] = K().dot(arow + static_cast<size_t>(p) * k, wrow, static_cast<size_t>(k));
  }
  auto n = make(std::move(out), {a, w}, "channel_weighted_sum");
  if (n->requires_grad)
    n->vjp = [a, w](const Var& g, std::vector<Var>& pg) {
      pg[0] = outer_spatial(g, w);
      pg[1] = spatial_dot(a, g);
    };
  return n;
}

Var outer_spatial(const Var& s, const Var& w) {
  check(s->value.ndim() == 3 && w->value.ndim() == 2, "outer_spatial: bad ranks");
  const int n0 = s->value.dim(0), h = s->value.dim(1), wd = s->value.dim(2);
  const int k = w->value.dim(1);
  check(w->value.dim(0) == n0, "outer_spatial: batch mismatch");
  Tensor out({n0, h, wd, k});
  for (int ni = 0; ni < n0; ++ni) {
    const double* wrow = w->value.data() + static_cast<size_t>(ni) * k;
    const double* srow = s->value.data() + static_cast<size_t>(ni) * h * wd;
    double* dst = out.data() + static_cast<size_t>(ni) * h * wd * k;
    for (int p = 0; p < h * wd; ++p)
      K().scale(wrow, srow[p], dst + static_cast<size_t>(p) * k, static_cast<size_t>(k));
  }
  auto n = make(std::move(out), {s, w}, "outer_spatial");
  if (n->requires_grad)
    n->vjp = [s, w](const Var& g, std::vector<Var>& pg) {
      pg[0] = channel_weighted_sum(g, w);
      pg[1] = spatial_dot(g, s);
    };
  return n;
}

Var spatial_dot(const Var& a, const Var& s) {
  check(a->value.ndim() == 4 && s->value.ndim() == 3, "spatial_dot: bad ranks");
  const int n0 = a->value.dim(0), h = a->value.dim(1), wd = a->value.dim(2), k = a->value.dim(3);
  check(s->value.dim(0) == n0 && s->value.dim(1) == h && s->value.dim(2) == wd,
        "spatial_dot: spatial mismatch");
  Tensor out = Tensor::zeros({n0, k});
  for (int ni = 0; ni < n0; ++ni) {
    const double* arow = a->value.data() + static_cast<size_t>(ni) * h * wd * k;
    const double* srow = s->value.data() + static_cast<size_t>(ni) * h * wd;
    double* dst = out.data() + static_cast<size_t>(ni) * k;
    for (int p = 0; p < h * wd; ++p)
      K().axpy(srow[p], arow + static_cast<size_t>(p) * k, dst, static_cast<size_t>(k));
  }
  auto n = make(std::move(out), {a, s}, "spatial_dot");
  if (n->requires_grad)
    n->vjp = [a, s](const Var& g, std::vector<Var>& pg) {
      pg[0] = outer_spatial(s, g);
      pg[1] = channel_weighted_sum(a, g);
    };
  return n;
}

Var logsumexp_rows(const Var& z) {
  check(z->value.ndim() == 2, "logsumexp_rows: need [N,K]");
  const int n0 = z->value.dim(0), k = z->value.dim(1);
  Tensor m({n0});
  for (int i = 0; i < n0; ++i)
    m[static_cast<size_t>(i)] = K().maxval(z->value.data() + static_cast<size_t>(i) * k,
                                           static_cast<size_t>(k));
  Var m_c = constant(m.clone());
  Var zs = sub(z, row_broadcast(m_c, k));
  Var lse = logv(row_sum(expv(zs)));
  return add(lse, m_c);
}

}  // namespace xbld::ad
