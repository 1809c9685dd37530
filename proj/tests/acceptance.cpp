// Acceptance gate: nine end-to-end checks of the library's quantitative
// contract, from metric oracles through desk-scale refinement runs. Each
// criterion prints exactly one [PASS]/[FAIL] line; the exit code is nonzero
// when any criterion fails. Tolerances and budgets are pinned in the bodies.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xbld/dataset.hpp"
#include "xbld/errors.hpp"
#include "xbld/gradcam.hpp"
#include "xbld/losses.hpp"
#include "xbld/metrics.hpp"
#include "xbld/model.hpp"
#include "xbld/ops.hpp"
#include "xbld/refine.hpp"
#include "xbld/report.hpp"
#include "xbld/rng.hpp"
#include "xbld/sources.hpp"
#include "xbld/tensor.hpp"

namespace fs = std::filesystem;

namespace {

using namespace xbld;
using Clock = std::chrono::steady_clock;

struct CheckFailed {
  std::string reason;
};

std::string strf(const char* fmt, ...) {
  char buf[768];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return std::string(buf);
}

[[noreturn]] void fail(std::string reason) { throw CheckFailed{std::move(reason)}; }

void require(bool ok, const std::string& reason) {
  if (!ok) fail(reason);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("xbld-acceptance-" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> relative_files(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file()) out.push_back(fs::relative(entry.path(), root).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Criterion 1: activation precision/recall against a brute-force oracle.
// ---------------------------------------------------------------------------

SaliencyMap random_map(Rng& rng, int h, int w, bool quantized) {
  SaliencyMap m;
  m.values = Tensor({h, w});
  for (size_t i = 0; i < m.values.numel(); ++i) {
    double v = rng.uniform();
    if (quantized) v = std::floor(v * 8.0) / 8.0;  // heavy ties
    m.values[i] = v;
  }
  return m;
}

BinaryMask random_mask(Rng& rng, int h, int w, double density) {
  BinaryMask m = BinaryMask::zeros(h, w);
  for (size_t i = 0; i < m.values.numel(); ++i)
    m.values[i] = rng.uniform() < density ? 1.0 : 0.0;
  return m;
}

struct BruteResult {
  double ap = 0.0;
  double ar = 0.0;
  bool ar_defined = false;
};

// Independent of the library: sorts a copy, interpolates the percentile cut,
// then literally counts pixels.
BruteResult brute_ap_ar(const SaliencyMap& m, const BinaryMask& obj, double t) {
  const size_t n = m.values.numel();
  std::vector<double> sorted(m.values.data(), m.values.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const double rank = t / 100.0 * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(rank);
  const size_t hi = std::min(lo + 1, n - 1);
  const double w = rank - static_cast<double>(lo);
  const double cut = sorted[lo] * (1.0 - w) + sorted[hi] * w;

  long kept = 0, inside = 0, obj_total = 0;
  for (size_t p = 0; p < n; ++p) {
    const bool on_obj = obj.values[p] != 0.0;
    if (on_obj) ++obj_total;
    if (m.values[p] >= cut) {
      ++kept;
      if (on_obj) ++inside;
    }
  }
  BruteResult r;
  r.ap = kept > 0 ? static_cast<double>(inside) / static_cast<double>(kept) : 0.0;
  r.ar_defined = obj_total > 0;
  if (r.ar_defined) r.ar = static_cast<double>(inside) / static_cast<double>(obj_total);
  return r;
}

std::string criterion_1() {
  const auto t0 = Clock::now();
  Rng rng(0xACCE01);
  const std::vector<double> grid = default_threshold_grid();
  require(grid.size() == 12, "threshold grid must have 12 points");

  int ar_checked = 0, empty_obj = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const SaliencyMap m = random_map(rng, 8, 8, /*quantized=*/false);
    const double density = 0.05 + 0.9 * rng.uniform();
    const BinaryMask obj = random_mask(rng, 8, 8, density);
    const double t = grid[rng.below(12)];
    const BruteResult want = brute_ap_ar(m, obj, t);

    const double got_ap = activation_precision(m, obj, t);
    require(got_ap == want.ap,
            strf("trial %d: AP %.17g != oracle %.17g at t=%g", trial, got_ap, want.ap, t));
    if (want.ar_defined) {
      const double got_ar = activation_recall(m, obj, t);
      require(got_ar == want.ar,
              strf("trial %d: AR %.17g != oracle %.17g at t=%g", trial, got_ar, want.ar, t));
      ++ar_checked;
    } else {
      ++empty_obj;
      bool threw = false;
      try {
        (void)activation_recall(m, obj, t);
      } catch (const EmptyMaskError&) {
        threw = true;
      }
      require(threw, strf("trial %d: empty object mask must raise EmptyMaskError", trial));
    }
  }
  require(ar_checked > 900, strf("only %d AR-defined trials; generator misconfigured", ar_checked));
  const double secs = seconds_since(t0);
  require(secs < 10.0, strf("runtime %.2f s exceeds the 10 s budget", secs));
  return strf("1000 triples bit-exact, %d with defined AR", ar_checked);
}

// ---------------------------------------------------------------------------
// Criterion 2: AR is non-increasing over the threshold grid.
// ---------------------------------------------------------------------------

std::string criterion_2() {
  const auto t0 = Clock::now();
  Rng rng(0xACCE02);
  const std::vector<double> grid = default_threshold_grid();

  for (int trial = 0; trial < 200; ++trial) {
    const SaliencyMap m = random_map(rng, 8, 8, /*quantized=*/trial % 2 == 1);
    BinaryMask obj;
    do {
      obj = random_mask(rng, 8, 8, 0.05 + 0.9 * rng.uniform());
    } while (obj.empty());

    double prev = std::numeric_limits<double>::infinity();
    for (double t : grid) {
      const double ar = activation_recall(m, obj, t);
      require(ar >= 0.0 && ar <= 1.0, strf("trial %d: AR %.17g outside [0,1]", trial, ar));
      require(ar <= prev,
              strf("trial %d: AR increased at t=%g (%.17g > %.17g)", trial, t, ar, prev));
      prev = ar;
    }
  }
  const double secs = seconds_since(t0);
  require(secs < 10.0, strf("runtime %.2f s exceeds the 10 s budget", secs));
  return "200 pairs, 12-point grid, no violations";
}

// ---------------------------------------------------------------------------
// Criterion 3: combined-loss gradient against central finite differences.
// ---------------------------------------------------------------------------

ArchitectureSpec tiny_spec() {
  ArchitectureSpec s;
  s.conv_blocks = {{2, false}};
  s.fc_sizes = {};
  s.num_classes = 2;
  s.input_h = 8;
  s.input_w = 8;
  s.input_c = 1;
  s.learning_rate = 1e-3;
  return s;
}

DecoyInstance confounded_instance() {
  DecoyInstance inst;
  inst.id = "fd-0";
  Tensor px = Tensor::zeros({8, 8, 1});
  // Low-level texture everywhere: with an exactly black background, every
  // padded receptive field would leave its pre-activation at the (zero) bias,
  // parking a ReLU kink on the evaluation point itself.
  Rng texture(0xACCE03);
  for (size_t i = 0; i < px.numel(); ++i) px[i] = 0.05 + 0.15 * texture.uniform();
  BinaryMask obj = BinaryMask::zeros(8, 8);
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 6; ++x) {
      px[static_cast<size_t>(y) * 8 + x] = 0.55 + 0.05 * ((y + x) % 3);
      obj.values[static_cast<size_t>(y) * 8 + x] = 1.0;
    }
  }
  BinaryMask con = BinaryMask::zeros(8, 8);
  for (int y = 0; y < 2; ++y) {
    for (int x = 6; x < 8; ++x) {
      px[static_cast<size_t>(y) * 8 + x] = 0.9 + 0.02 * (y * 2 + (x - 6));
      con.values[static_cast<size_t>(y) * 8 + x] = 1.0;
    }
  }
  inst.image.pixels = px;
  inst.image.label = 1;
  inst.obj_mask = obj;
  inst.con_mask = con;
  inst.corner = Corner::TR;
  inst.patch_size = 2;
  return inst;
}

std::string criterion_3() {
  const auto t0 = Clock::now();
  const ArchitectureSpec spec = tiny_spec();
  const DecoyInstance inst = confounded_instance();
  const Tensor batch = make_batch({inst}, {0});
  const BatchAnnotations ann = BatchAnnotations::from_instances({inst}, {0}, 8, 8);
  const LossCoefficients coeffs{2.7, 0.1, 1e-5};
  // A small positive intersection tolerance keeps set membership (and with it
  // the detached distance weight) locally constant around theta, so the probe
  // differentiates the same function the analytic gradient describes.
  const double eps = 1e-3;

  // Pick the first committed seed whose confounder cells sit well clear of the
  // membership boundary; the probe below would otherwise straddle a jump of
  // the piecewise-constant distance weight.
  Model model;
  CamNormStats pinned;
  uint64_t chosen = 0;
  for (uint64_t seed : {17ULL, 41ULL, 99ULL, 4242ULL, 31337ULL}) {
    Model candidate = init_model(spec, seed);
    ForwardResult fr = forward_with_features(candidate, batch, /*train=*/true);
    CamNormStats identity;
    identity.shift = {0.0};
    identity.inv_range = {1.0};
    identity.flat_positive = {false};
    const ad::Var raw = grad_cam_graph(fr, ann.labels, &identity);
    CamNormStats stats = compute_cam_stats(raw->value);
    const ad::Var cam = grad_cam_graph(fr, ann.labels, &stats);

    bool clear = true;
    int active = 0;
    for (int y = 0; y < 8 && clear; ++y) {
      for (int x = 0; x < 8; ++x) {
        const size_t p = static_cast<size_t>(y) * 8 + x;
        if (ann.con_grid[0].values[p] == 0.0) continue;
        const double v = cam->value[p];
        if (std::fabs(v - eps) < 5e-4) {
          clear = false;
          break;
        }
        if (v > eps) ++active;
      }
    }
    if (!clear || active < 2) continue;
    const CombinedLoss probe = combined_loss(fr, ann, coeffs, eps, &stats);
    if (probe.breakdown.expl <= 1e-4) continue;
    model = std::move(candidate);
    pinned = std::move(stats);
    chosen = seed;
    break;
  }
  require(chosen != 0, "no committed seed produced a well-posed confounded evaluation point");
  require(model.num_parameters() <= 1000,
          strf("toy model has %zu parameters; criterion caps it at 1000", model.num_parameters()));

  const auto loss_value = [&](const Model& m) {
    ForwardResult fr = forward_with_features(m, batch, /*train=*/true);
    return combined_loss(fr, ann, coeffs, eps, &pinned).breakdown.total;
  };

  ForwardResult fr = forward_with_features(model, batch, /*train=*/true);
  const CombinedLoss cl = combined_loss(fr, ann, coeffs, eps, &pinned);
  require(cl.breakdown.expl > 1e-4, "explanation term must contribute at the evaluation point");
  require(cl.breakdown.ce > 0.0 && cl.breakdown.reg > 0.0, "degenerate loss breakdown");
  const std::vector<ad::Var> grads = ad::grad(cl.total, fr.param_vars);

  size_t checked = 0;
  int nonzero = 0;
  double worst_rel = 0.0;
  for (size_t ti = 0; ti < model.params.size(); ++ti) {
    Tensor& p = model.params[ti];
    const Tensor& g = grads[ti]->value;
    for (size_t j = 0; j < p.numel(); ++j) {
      const double an = g[j];
      if (an != 0.0) ++nonzero;
      const double keep = p[j];
      // ReLU kinks make the loss only piecewise smooth; when a probe interval
      // straddles a kink the quotient is retried at a smaller step, which
      // shrinks the straddled set. A wrong analytic gradient fails at every h.
      bool pass = false;
      double first_fd = 0.0, first_err = 0.0;
      for (double h : {1e-5, 1e-6, 3e-7}) {
        p[j] = keep + h;
        const double fp = loss_value(model);
        p[j] = keep - h;
        const double fm = loss_value(model);
        p[j] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::fabs(fd - an);
        if (first_fd == 0.0 && first_err == 0.0) {
          first_fd = fd;
          first_err = err;
        }
        const double rel = err / std::max({std::fabs(fd), std::fabs(an), 1e-6});
        if (err <= 1e-9 || rel <= 1e-4) {
          worst_rel = std::max(worst_rel, rel);
          pass = true;
          break;
        }
      }
      require(pass, strf("tensor %zu coord %zu: analytic %.10g vs fd %.10g (|err| %.3g at h=1e-5)",
                         ti, j, an, first_fd, first_err));
      ++checked;
    }
  }
  require(checked == model.num_parameters(), "finite differences must cover every parameter");
  require(nonzero > 50, strf("only %d nonzero analytic gradients; path not exercised", nonzero));
  const double secs = seconds_since(t0);
  require(secs < 60.0, strf("runtime %.2f s exceeds the 60 s budget", secs));
  return strf("%zu coordinates within rel 1e-4 (seed %llu, worst %.2g)", checked,
              static_cast<unsigned long long>(chosen), worst_rel);
}

// ---------------------------------------------------------------------------
// Criterion 4: zero-intersection batches leave only the CE and decay terms.
// ---------------------------------------------------------------------------

// Forward result whose Grad-CAM equals the (nonnegative) feature plane: one
// channel, logits = spatial_sum * W, so alpha = W[0][class].
ForwardResult plane_forward(const Tensor& feature_plane, double w0, double w1) {
  const int hs = feature_plane.dim(0), ws = feature_plane.dim(1);
  Tensor feat({1, hs, ws, 1});
  for (size_t i = 0; i < feature_plane.numel(); ++i) feat[i] = feature_plane[i];
  ForwardResult fr;
  fr.features = ad::leaf(std::move(feat), /*requires_grad=*/true);
  fr.input = ad::leaf(Tensor::zeros({1, hs, ws, 1}), /*requires_grad=*/false);
  Tensor w({1, 2});
  w[0] = w0;
  w[1] = w1;
  const ad::Var wv = ad::leaf(std::move(w), /*requires_grad=*/true);
  fr.logits = ad::matmul(ad::spatial_sum(fr.features), wv);
  fr.param_vars = {wv};
  return fr;
}

std::string criterion_4() {
  const LossCoefficients coeffs{2.7, 0.1, 1e-5};

  // (a) Real model, confounder masks empty: the intersection is empty for
  // every instance, so the explanation term vanishes identically.
  {
    const ArchitectureSpec spec = tiny_spec();
    const Model model = init_model(spec, 7);
    std::vector<DecoyInstance> batch;
    for (int i = 0; i < 3; ++i) {
      DecoyInstance inst;
      inst.id = strf("clean-%d", i);
      Tensor px = Tensor::zeros({8, 8, 1});
      BinaryMask obj = BinaryMask::zeros(8, 8);
      Rng rng(Rng::derive(0xACCE04, static_cast<uint64_t>(i)));
      for (int y = 2; y < 6; ++y) {
        for (int x = 1 + i; x < 5 + i; ++x) {
          px[static_cast<size_t>(y) * 8 + x] = 0.5 + 0.4 * rng.uniform();
          obj.values[static_cast<size_t>(y) * 8 + x] = 1.0;
        }
      }
      inst.image.pixels = px;
      inst.image.label = i % 2;
      inst.obj_mask = obj;
      inst.con_mask = BinaryMask::zeros(8, 8);
      batch.push_back(std::move(inst));
    }
    const CombinedLoss cl = combined_loss(model, batch, coeffs);
    require(cl.breakdown.expl == 0.0,
            strf("empty-confounder batch: expl %.17g != 0", cl.breakdown.expl));
    const double expected = coeffs.lambda1 * cl.breakdown.ce + coeffs.lambda * cl.breakdown.reg;
    require(cl.breakdown.total == expected,
            strf("empty-confounder batch: total %.17g != lambda1*ce + lambda*reg %.17g",
                 cl.breakdown.total, expected));
    for (double v : cl.breakdown.per_instance_expl)
      require(v == 0.0, "per-instance explanation terms must all be exactly zero");
  }

  // (b) Nonempty confounder whose cells the CAM misses exactly: the feature
  // plane is zero on the confounder corner, so the normalized map is too.
  {
    Tensor plane = Tensor::zeros({4, 4});
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        plane[static_cast<size_t>(y) * 4 + x] =
            (y < 2 && x < 2) ? 0.0 : 1.0 + 0.5 * ((y * 4 + x) % 3);
    const ForwardResult fr = plane_forward(plane, 1.0, 0.5);

    BinaryMask con = BinaryMask::zeros(4, 4);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) con.values[static_cast<size_t>(y) * 4 + x] = 1.0;
    BatchAnnotations ann;
    ann.labels = {0};
    ann.con_grid = {con};
    ann.centroids = {std::make_optional(std::make_pair(2.5, 2.5))};
    ann.avoid_input = {con};
    ann.grid_h = 4;
    ann.grid_w = 4;

    const ad::Var cam = grad_cam_graph(fr, ann.labels, nullptr);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        require(cam->value[static_cast<size_t>(y) * 4 + x] == 0.0,
                "CAM must be exactly zero on the confounder corner");

    const CombinedLoss cl = combined_loss(fr, ann, coeffs);
    require(cl.breakdown.expl == 0.0,
            strf("missed-confounder batch: expl %.17g != 0", cl.breakdown.expl));
    const double expected = coeffs.lambda1 * cl.breakdown.ce + coeffs.lambda * cl.breakdown.reg;
    require(cl.breakdown.total == expected,
            strf("missed-confounder batch: total %.17g != lambda1*ce + lambda*reg %.17g",
                 cl.breakdown.total, expected));
  }

  return "empty-mask and missed-mask batches both reduce exactly";
}

// ---------------------------------------------------------------------------
// Criterion 5: strictly farther confounder corners strictly increase the loss.
// ---------------------------------------------------------------------------

std::string criterion_5() {
  // Fixed activation mass: every corner patch reads 1.0 pre-normalization
  // (0.5 after min-max against the hot/cold interior cells), so only the
  // distance weight differs between placements.
  const int hs = 8, ws = 8;
  Tensor plane = Tensor::full({hs, ws}, 1.0);
  plane[static_cast<size_t>(2) * ws + 1] = 2.0;  // hot cell at the centroid
  plane[static_cast<size_t>(3) * ws + 2] = 0.0;  // cold cell, off every corner
  const ForwardResult fr = plane_forward(plane, 1.0, -0.25);

  const std::pair<double, double> g{2.0, 1.0};
  const double grid_diag = std::hypot(hs - 1, ws - 1);

  struct Placement {
    const char* name;
    int y0, x0;
  };
  // Ordered by strictly increasing (dmin+dmax) from the centroid (2,1).
  const Placement order[] = {{"TL", 0, 0}, {"BL", 6, 0}, {"TR", 0, 6}, {"BR", 6, 6}};

  double prev_loss = -1.0, prev_d = -1.0;
  std::string detail;
  for (const Placement& pl : order) {
    BinaryMask con = BinaryMask::zeros(hs, ws);
    double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
    for (int y = pl.y0; y < pl.y0 + 2; ++y) {
      for (int x = pl.x0; x < pl.x0 + 2; ++x) {
        con.values[static_cast<size_t>(y) * ws + x] = 1.0;
        const double d = std::hypot(y - g.first, x - g.second);
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
    }
    const double dweight = (dmin + dmax) / 2.0 / grid_diag;

    BatchAnnotations ann;
    ann.labels = {0};
    ann.con_grid = {con};
    ann.centroids = {std::make_optional(g)};
    ann.avoid_input = {con};
    ann.grid_h = hs;
    ann.grid_w = ws;

    const ExplLossResult res = xbl_d_expl_loss(fr, ann, /*eps=*/0.0);
    const double loss = res.loss->value[0];
    require(res.n_contributing == 1, "single instance must contribute");
    require(std::fabs(loss - dweight * 2.0) <= 1e-12,
            strf("%s: loss %.17g != distance weight x mass %.17g", pl.name, loss, dweight * 2.0));
    require(dweight > prev_d, strf("%s: corner ordering not strictly farther", pl.name));
    require(loss > prev_loss,
            strf("%s: loss %.17g did not strictly increase past %.17g", pl.name, loss, prev_loss));
    prev_loss = loss;
    prev_d = dweight;
    detail += strf("%s%s=%.4f", detail.empty() ? "" : " < ", pl.name, loss);
  }
  return detail;
}

// ---------------------------------------------------------------------------
// Criterion 6: decoy builds are byte-identical; masks match the contract.
// ---------------------------------------------------------------------------

SourceDataset toy_source() {
  const auto make = [](uint64_t stream) {
    return [stream](int i) {
      LabeledImage img;
      img.label = i % 3;
      img.pixels = Tensor::zeros({14, 14, 1});
      Rng rng(Rng::derive(stream, static_cast<uint64_t>(i)));
      for (size_t p = 0; p < img.pixels.numel(); ++p) img.pixels[p] = 0.2 * rng.uniform();
      const int row0 = 3 + 3 * (i % 3);
      for (int y = row0; y < row0 + 2; ++y)
        for (int x = 2; x < 12; ++x)
          img.pixels[static_cast<size_t>(y) * 14 + x] = 0.7 + 0.3 * rng.uniform();
      return img;
    };
  };
  SourceDataset src;
  src.name = "toy";
  src.num_classes = 3;
  src.train.count = 12;
  src.train.get = make(0xACCE06);
  src.test.count = 6;
  src.test.get = make(0xACCE07);
  return src;
}

std::string criterion_6() {
  const SourceDataset src = toy_source();
  DecoyParams params;
  params.patch_size = 3;
  params.strategy = MaskStrategy::intensity_threshold(0.5);
  params.seed = 0xD5EED;

  const fs::path dir_a = scratch_dir("decoy-a");
  const fs::path dir_b = scratch_dir("decoy-b");
  build_decoy_dataset(src, params, dir_a.string());
  build_decoy_dataset(src, params, dir_b.string());

  const std::vector<std::string> files_a = relative_files(dir_a);
  const std::vector<std::string> files_b = relative_files(dir_b);
  require(!files_a.empty(), "first build wrote no files");
  require(files_a == files_b, "the two builds wrote different file sets");
  for (const std::string& name : files_a)
    require(read_bytes(dir_a / name) == read_bytes(dir_b / name), "bytes differ: " + name);

  const DecoyDatasetManifest manifest = load_manifest(dir_a.string());
  const std::vector<DecoyInstance> test_split = load_split(manifest, "test");
  require(test_split.size() == 6, "test split size mismatch");
  for (const DecoyInstance& inst : test_split)
    require(inst.con_mask.count() == 0,
            strf("test instance %s has a nonzero confounder mask", inst.id.c_str()));

  const std::vector<DecoyInstance> train_split = load_split(manifest, "train");
  require(train_split.size() == 12, "train split size mismatch");
  for (const DecoyInstance& inst : train_split) {
    require(inst.con_mask.count() == 9,
            strf("train instance %s: confounder mask has %zu ones, want patch^2 = 9",
                 inst.id.c_str(), inst.con_mask.count()));
    require(inst.corner != Corner::none, "train instance must record its corner");
    const int y0 = (inst.corner == Corner::TL || inst.corner == Corner::TR) ? 0 : 11;
    const int x0 = (inst.corner == Corner::TL || inst.corner == Corner::BL) ? 0 : 11;
    for (int y = 0; y < 14; ++y) {
      for (int x = 0; x < 14; ++x) {
        const bool in_patch = y >= y0 && y < y0 + 3 && x >= x0 && x < x0 + 3;
        require(inst.con_mask.values[static_cast<size_t>(y) * 14 + x] == (in_patch ? 1.0 : 0.0),
                strf("train instance %s: mask is not the %s corner square", inst.id.c_str(),
                     corner_name(inst.corner)));
      }
    }
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  return strf("%zu files byte-identical; masks exact", files_a.size());
}

// ---------------------------------------------------------------------------
// Criteria 7-8: desk-scale refinement on Decoy Fashion MNIST (shared setup).
// ---------------------------------------------------------------------------

constexpr uint64_t kDeskSeed = 11;
constexpr int kDeskEpochs = 15;

struct DeskScale {
  std::string error;  // nonempty when setup failed
  std::vector<DecoyInstance> train;
  std::vector<DecoyInstance> test;
  ModelHandle unrefined;
  double unref_acc = 0.0;
  double unref_ar40 = 0.0;
  double build_seconds = 0.0;
};

double mean_ar_at_40(const Model& model, const std::vector<DecoyInstance>& test) {
  std::vector<int> targets;
  targets.reserve(test.size());
  for (const DecoyInstance& inst : test) targets.push_back(inst.image.label);
  const std::vector<SaliencyMap> cams = batch_grad_cam(model, test, targets, 128);
  std::vector<SaliencyMap> expls;
  std::vector<BinaryMask> objs;
  expls.reserve(test.size());
  objs.reserve(test.size());
  for (size_t i = 0; i < test.size(); ++i) {
    expls.push_back(upsample(cams[i], model.spec.input_h, model.spec.input_w));
    objs.push_back(test[i].obj_mask);
  }
  const SweepResult sw = sweep(expls, objs, {40.0});
  return sw.ar.values.at(0);
}

const DeskScale& desk_scale() {
  static const DeskScale state = [] {
    DeskScale d;
    const auto t0 = Clock::now();
    try {
      SourceOptions opts;
      opts.train_limit = 10000;
      opts.allow_download = false;  // hermetic: the source cache must be present
      const SourceDataset src = open_source("fmnist", opts);
      if (src.train.count != 10000)
        throw ValueError(strf("expected 10000 train images, got %d", src.train.count));
      if (src.test.count != 10000)
        throw ValueError(strf("expected 10000 test images, got %d", src.test.count));

      const MaskStrategy strat = MaskStrategy::intensity_threshold(0.1);
      d.train.reserve(10000);
      for (int i = 0; i < src.train.count; ++i) {
        const LabeledImage img = src.train.get(i);
        Rng rng(Rng::derive(kDeskSeed, static_cast<uint64_t>(i)));
        StampResult st = stamp_confounder(img, 4, rng);
        DecoyInstance inst;
        inst.id = "train-" + std::to_string(i);
        inst.obj_mask = derive_object_mask(img, strat);  // pre-decoy pixels
        inst.image = std::move(st.image);
        inst.con_mask = std::move(st.con_mask);
        inst.corner = st.corner;
        inst.patch_size = 4;
        d.train.push_back(std::move(inst));
      }
      d.test.reserve(10000);
      for (int i = 0; i < src.test.count; ++i) {
        LabeledImage img = src.test.get(i);
        DecoyInstance inst;
        inst.id = "test-" + std::to_string(i);
        inst.obj_mask = derive_object_mask(img, strat);
        inst.con_mask = BinaryMask::zeros(img.h(), img.w());
        inst.image = std::move(img);
        d.test.push_back(std::move(inst));
      }

      TrainConfig tc;
      tc.epochs = kDeskEpochs;
      tc.batch_size = 32;
      tc.seed = kDeskSeed;
      d.unrefined = fit_unrefined(preset("fmnist_desk"), d.train, "fmnist", tc);
      d.unref_acc = accuracy(d.unrefined.model, d.test);
      d.unref_ar40 = mean_ar_at_40(d.unrefined.model, d.test);
    } catch (const CheckFailed& f) {
      d.error = f.reason;
    } catch (const std::exception& e) {
      d.error = e.what();
    }
    d.build_seconds = seconds_since(t0);
    return d;
  }();
  return state;
}

std::string criterion_7() {
  const auto t0 = Clock::now();
  const DeskScale& d = desk_scale();
  require(d.error.empty(), "desk-scale setup failed: " + d.error);

  RefineConfig rc;
  rc.method = RefineMethod::xbl_d;
  rc.epochs = kDeskEpochs;
  rc.seed = kDeskSeed;
  rc.batch_size = 32;
  const auto [refined, trace] = refine(d.unrefined, d.train, rc);
  require(!trace.aborted_non_finite, "refinement aborted on a non-finite loss");
  require(trace.epochs.size() == static_cast<size_t>(kDeskEpochs),
          strf("expected %d refinement epochs, got %zu", kDeskEpochs, trace.epochs.size()));

  const double acc = accuracy(refined.model, d.test);
  const double ar40 = mean_ar_at_40(refined.model, d.test);
  const double expl_first = trace.epochs.front().mean.expl;
  const double expl_last = trace.epochs.back().mean.expl;

  require(acc >= d.unref_acc + 0.02,
          strf("clean accuracy %.4f vs unrefined %.4f: need at least +0.02", acc, d.unref_acc));
  require(ar40 >= d.unref_ar40 + 0.05,
          strf("AR@40 %.4f vs unrefined %.4f: need at least +0.05", ar40, d.unref_ar40));
  require(expl_first > 0.0, "first-epoch explanation term is zero; nothing to reduce");
  require(expl_last < 0.5 * expl_first,
          strf("mean expl %.6f at the last epoch is not below half of %.6f", expl_last,
               expl_first));

  const double secs = seconds_since(t0);
  require(secs < 1800.0, strf("runtime %.0f s exceeds the 30 min budget", secs));
  return strf("acc %.4f vs %.4f; AR@40 %.4f vs %.4f; expl %.5f -> %.5f", acc, d.unref_acc, ar40,
              d.unref_ar40, expl_first, expl_last);
}

std::string criterion_8() {
  const DeskScale& d = desk_scale();
  require(d.error.empty(), "desk-scale setup failed: " + d.error);

  RefineConfig rc;
  rc.method = RefineMethod::rrr;
  rc.epochs = kDeskEpochs;
  rc.seed = kDeskSeed;
  rc.batch_size = 32;
  const auto [refined, trace] = refine(d.unrefined, d.train, rc);
  require(!trace.aborted_non_finite, "rrr refinement aborted on a non-finite loss");
  require(trace.epochs.size() == static_cast<size_t>(kDeskEpochs),
          strf("expected %d refinement epochs, got %zu", kDeskEpochs, trace.epochs.size()));

  const double acc = accuracy(refined.model, d.test);
  require(acc >= d.unref_acc - 0.01,
          strf("clean accuracy %.4f vs unrefined %.4f: degrades past -0.01", acc, d.unref_acc));
  return strf("acc %.4f vs unrefined %.4f", acc, d.unref_acc);
}

// ---------------------------------------------------------------------------
// Criterion 9: report schemas and reference-constant isolation.
// ---------------------------------------------------------------------------

std::string criterion_9() {
  // Reference transcription, re-typed here independently of the library table.
  struct AccRef {
    const char* dataset;
    const char* method;
    double value;
  };
  const AccRef acc_refs[] = {
      {"fmnist", "unrefined", 0.862}, {"fmnist", "xbl_d", 0.904}, {"fmnist", "rrr", 0.894},
      {"fmnist", "rrr_g", 0.786},     {"fmnist", "rbr", 0.876},   {"fmnist", "cdep", 0.767},
      {"fmnist", "hint", 0.582},      {"fmnist", "ce", 0.858},    {"cifar10", "unrefined", 0.789},
      {"cifar10", "xbl_d", 0.843},    {"cifar10", "rrr", 0.810},  {"coco2", "unrefined", 0.845},
      {"coco2", "xbl_d", 0.938},      {"coco2", "rrr", 0.853},
  };
  for (const AccRef& r : acc_refs)
    require(reference_accuracy(r.dataset, r.method) == r.value,
            strf("reference accuracy %s/%s != %.3f", r.dataset, r.method, r.value));
  require(std::isnan(reference_accuracy("cifar10", "rrr_g")),
          "cells the published table leaves blank must stay NaN");
  require(std::isnan(reference_accuracy("coco2", "hint")),
          "cells the published table leaves blank must stay NaN");

  struct SumRef {
    const char* metric;
    const char* dataset;
    const char* method;
    double value;
  };
  const SumRef sum_refs[] = {
      {"AR", "fmnist", "unrefined", 0.280}, {"AR", "fmnist", "xbl_d", 0.557},
      {"AR", "fmnist", "rrr", 0.335},       {"AR", "cifar10", "unrefined", 0.419},
      {"AR", "cifar10", "xbl_d", 0.516},    {"AR", "cifar10", "rrr", 0.432},
      {"AR", "coco2", "unrefined", 0.500},  {"AR", "coco2", "xbl_d", 0.860},
      {"AR", "coco2", "rrr", 0.841},        {"AP", "fmnist", "unrefined", 0.318},
      {"AP", "fmnist", "xbl_d", 0.663},     {"AP", "fmnist", "rrr", 0.425},
      {"AP", "cifar10", "unrefined", 0.168}, {"AP", "cifar10", "xbl_d", 0.342},
      {"AP", "cifar10", "rrr", 0.181},      {"AP", "coco2", "unrefined", 0.609},
      {"AP", "coco2", "xbl_d", 0.698},      {"AP", "coco2", "rrr", 0.761},
  };
  for (const SumRef& r : sum_refs)
    require(reference_summary(r.metric, r.dataset, r.method) == r.value,
            strf("reference %s %s/%s != %.3f", r.metric, r.dataset, r.method, r.value));

  // Emit a small synthetic report; the computed values are deliberately
  // different from every reference constant.
  const fs::path dir = scratch_dir("report");
  MethodResult unref;
  unref.method = "unrefined";
  unref.accuracy = 0.61;
  unref.ar = MetricCurve{{40.0, 45.0}, {0.42, 0.40}, {5, 5}, MetricKind::AR, "unrefined"};
  unref.ap = MetricCurve{{40.0, 45.0}, {0.33, 0.36}, {5, 5}, MetricKind::AP, "unrefined"};
  unref.summary_ar = 0.42;
  unref.summary_ap = 0.33;
  MethodResult xbl;
  xbl.method = "xbl_d";
  xbl.accuracy = 0.66;
  xbl.ar = MetricCurve{{40.0, 45.0}, {0.51, 0.47}, {5, 5}, MetricKind::AR, "xbl_d"};
  xbl.ap = MetricCurve{{40.0, 45.0}, {0.61, 0.64}, {5, 5}, MetricKind::AP, "xbl_d"};
  xbl.summary_ar = 0.51;
  xbl.summary_ap = 0.61;
  ReportInputs inputs;
  inputs.dataset = "fmnist";
  inputs.reference_threshold = 40.0;
  inputs.methods = {unref, xbl};
  const ReportStatus status = emit_report(inputs, dir.string());
  require(status.complete && status.gaps.empty(), "complete inputs must yield a gap-free report");

  const auto expect_exact = [](const fs::path& path, std::vector<std::string> want) {
    std::vector<std::string> got = read_lines(path);
    require(!got.empty(), path.string() + " is empty");
    require(got.front() == want.front(),
            path.filename().string() + ": header \"" + got.front() + "\" != \"" + want.front() +
                "\"");
    std::sort(got.begin() + 1, got.end());
    std::sort(want.begin() + 1, want.end());
    require(got == want, path.filename().string() + " rows differ from the documented schema");
  };

  expect_exact(dir / "accuracy.csv",
               {"method,dataset,accuracy,reference_accuracy_paper_full_scale",
                "unrefined,fmnist,0.610000,0.862000", "xbl_d,fmnist,0.660000,0.904000"});
  expect_exact(dir / "summary_ar_ap.csv",
               {"metric,method,dataset,value,reference_paper_full_scale",
                "AR,unrefined,fmnist,0.420000,0.280000", "AP,unrefined,fmnist,0.330000,0.318000",
                "AR,xbl_d,fmnist,0.510000,0.557000", "AP,xbl_d,fmnist,0.610000,0.663000"});
  expect_exact(dir / "curves.csv",
               {"method,metric,threshold,value,n_instances", "unrefined,AR,40,0.420000,5",
                "unrefined,AR,45,0.400000,5", "unrefined,AP,40,0.330000,5",
                "unrefined,AP,45,0.360000,5", "xbl_d,AR,40,0.510000,5", "xbl_d,AR,45,0.470000,5",
                "xbl_d,AP,40,0.610000,5", "xbl_d,AP,45,0.640000,5"});

  const std::string comparison = read_bytes(dir / "comparison.txt");
  require(comparison.find("[paper, full scale]") != std::string::npos,
          "comparison.txt must label the reference columns \"[paper, full scale]\"");
  require(comparison.find("never feed computation") != std::string::npos,
          "comparison.txt must carry the reference-isolation disclaimer");
  fs::remove_all(dir);
  return "4 artifacts, 32 reference cells verified";
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    std::function<std::string()> body;
  };
  const std::vector<Criterion> criteria = {
      {1, "AP/AR bit-exact against a brute-force counting oracle (1000 triples, < 10 s)",
       criterion_1},
      {2, "AR non-increasing over the {40..95} percent grid (200 pairs, < 10 s)", criterion_2},
      {3, "combined-loss gradient matches central finite differences (rel tol 1e-4, < 60 s)",
       criterion_3},
      {4, "zero-intersection batches: expl exactly 0, total == lambda1*ce + lambda*reg",
       criterion_4},
      {5, "strictly farther confounder corners strictly increase the distance-aware loss",
       criterion_5},
      {6, "decoy builds byte-identical; test masks empty, train masks one corner square",
       criterion_6},
      {7, "desk-scale refinement: acc +0.02, AR@40 +0.05, final expl < 50% of first (< 30 min)",
       criterion_7},
      {8, "desk-scale rrr refinement completes with accuracy >= unrefined - 0.01", criterion_8},
      {9, "report schemas exact; reference constants only in labeled reference columns",
       criterion_9},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = Clock::now();
    std::string detail, why;
    bool ok = true;
    try {
      detail = c.body();
    } catch (const CheckFailed& f) {
      ok = false;
      why = f.reason;
    } catch (const std::exception& e) {
      ok = false;
      why = strf("unexpected exception: %s", e.what());
    }
    const double secs = seconds_since(t0);
    if (ok) {
      std::printf("[PASS] criterion %d: %s%s%s (%.1f s)\n", c.id, c.title,
                  detail.empty() ? "" : " -- ", detail.c_str(), secs);
    } else {
      std::printf("[FAIL] criterion %d: %s -- %s (%.1f s)\n", c.id, c.title, why.c_str(), secs);
      ++failed;
    }
    std::fflush(stdout);
  }
  if (failed == 0) {
    std::printf("all 9 criteria passed\n");
    return 0;
  }
  std::printf("%d of 9 criteria failed\n", failed);
  return 1;
}
