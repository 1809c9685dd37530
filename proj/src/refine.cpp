#include "xbld/refine.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "xbld/errors.hpp"
#include "xbld/metrics.hpp"
#include "xbld/ops.hpp"
#include "xbld/rng.hpp"

namespace xbld {

namespace fs = std::filesystem;

const char* refine_method_name(RefineMethod m) {
  switch (m) {
    case RefineMethod::xbl_d: return "xbl_d";
    case RefineMethod::rrr: return "rrr";
    case RefineMethod::rrr_g: return "rrr_g";
  }
  return "?";
}

RefineMethod refine_method_from_name(const std::string& name) {
  if (name == "xbl_d") return RefineMethod::xbl_d;
  if (name == "rrr") return RefineMethod::rrr;
  if (name == "rrr_g") return RefineMethod::rrr_g;
  throw ValueError("unknown refinement method: " + name + " (expected xbl_d|rrr|rrr_g)");
}

CentroidCache centroid_cache(const std::vector<DecoyInstance>& data, int grid_h, int grid_w) {
  CentroidCache cache;
  for (const auto& inst : data) {
    BinaryMask aligned = align_mask_to_grid(inst.obj_mask, grid_h, grid_w);
    if (aligned.empty())
      cache[inst.id] = std::nullopt;
    else
      cache[inst.id] = centroid(aligned);
  }
  return cache;
}

namespace {

/// Grid-resolution annotation state reused across epochs (mask-only, theta-free).
struct InstanceAnnotation {
  BinaryMask con_grid;
  std::optional<std::pair<double, double>> centroid;
};

std::vector<InstanceAnnotation> build_annotation_cache(const std::vector<DecoyInstance>& data,
                                                       int gh, int gw,
                                                       const CentroidCache& centroids) {
  std::vector<InstanceAnnotation> cache;
  cache.reserve(data.size());
  for (const auto& inst : data) {
    InstanceAnnotation a;
    a.con_grid = align_mask_to_grid(inst.con_mask, gh, gw);
    a.centroid = centroids.at(inst.id);
    cache.push_back(std::move(a));
  }
  return cache;
}

BatchAnnotations assemble_batch_annotations(const std::vector<DecoyInstance>& data,
                                            const std::vector<InstanceAnnotation>& cache,
                                            const std::vector<int>& chunk, int gh, int gw) {
  BatchAnnotations ann;
  ann.grid_h = gh;
  ann.grid_w = gw;
  for (int idx : chunk) {
    const auto& inst = data[static_cast<size_t>(idx)];
    const auto& cached = cache[static_cast<size_t>(idx)];
    ann.labels.push_back(inst.image.label);
    ann.con_grid.push_back(cached.con_grid);
    ann.avoid_input.push_back(inst.con_mask);
    ann.centroids.push_back(cached.centroid);
    if (!cached.centroid) ++ann.skipped;
  }
  return ann;
}

struct StepLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

StepLoss method_loss(RefineMethod method, const ForwardResult& fr, const BatchAnnotations& ann,
                     const LossCoefficients& coeffs, double eps) {
  ad::Var ce = cross_entropy(fr.logits, ann.labels);
  ad::Var expl;
  switch (method) {
    case RefineMethod::xbl_d:
      expl = xbl_d_expl_loss(fr, ann, eps).loss;
      break;
    case RefineMethod::rrr:
      expl = rrr_expl_loss(fr, ann.avoid_input);
      break;
    case RefineMethod::rrr_g:
      expl = rrr_g_expl_loss(fr, ann).loss;
      break;
  }
  ad::Var reg = weight_squares(fr.param_vars);
  ad::Var total = ad::add(
      ad::add(ad::scale(ce, coeffs.lambda1), ad::scale(expl, coeffs.lambda2)),
      ad::scale(reg, coeffs.lambda));

  StepLoss out;
  out.total = total;
  out.breakdown.ce = ce->value[0];
  out.breakdown.expl = expl->value[0];
  out.breakdown.reg = reg->value[0];
  out.breakdown.total = total->value[0];
  out.breakdown.lambda1 = coeffs.lambda1;
  out.breakdown.lambda2 = coeffs.lambda2;
  out.breakdown.lambda = coeffs.lambda;
  return out;
}

}  // namespace

std::pair<ModelHandle, RefineTrace> refine(const ModelHandle& handle,
                                           const std::vector<DecoyInstance>& train,
                                           const RefineConfig& cfg,
                                           const std::vector<DecoyInstance>* clean_test) {
  if (cfg.epochs < 1) throw ValueError("refine: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValueError("refine: batch_size must be >= 1");
  if (train.empty()) throw ValueError("refine: empty training split");
  if (cfg.coeffs.lambda2 == 0.0)
    std::fprintf(stderr,
                 "[refine] warning: lambda2 = 0 disables the %s explanation term; "
                 "this is plain cross-entropy training\n",
                 refine_method_name(cfg.method));

  Model model = handle.model;
  for (auto& p : model.params) p = p.clone();
  const int gh = model.spec.feature_h(), gw = model.spec.feature_w();

  CentroidCache centroids = centroid_cache(train, gh, gw);
  std::vector<InstanceAnnotation> ann_cache = build_annotation_cache(train, gh, gw, centroids);

  RefineTrace trace;
  for (const auto& a : ann_cache) trace.skipped_instances += a.centroid ? 0 : 1;
  if (trace.skipped_instances > 0)
    std::fprintf(stderr, "[refine] warning: %d instance(s) have empty aligned object masks\n",
                 trace.skipped_instances);

  std::ofstream losses_csv;
  if (!cfg.artifact_dir.empty()) {
    fs::create_directories(cfg.artifact_dir);
    const std::string losses_path = cfg.artifact_dir + "/losses.csv";
    const bool fresh = !fs::exists(losses_path);
    losses_csv.open(losses_path, std::ios::app);
    if (!losses_csv) throw IoError("cannot open " + losses_path + " for writing");
    if (fresh) losses_csv << "step,ce,expl,reg,total\n";
  }

  Adam opt(model.spec.learning_rate);
  std::vector<Tensor> last_good;
  for (const auto& p : model.params) last_good.push_back(p.clone());

  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng epoch_rng(Rng::derive(cfg.seed, 0x7e41 + static_cast<uint64_t>(epoch)));
    epoch_rng.shuffle(order);

    LossBreakdown mean;
    mean.lambda1 = cfg.coeffs.lambda1;
    mean.lambda2 = cfg.coeffs.lambda2;
    mean.lambda = cfg.coeffs.lambda;
    size_t steps_in_epoch = 0;
    bool aborted = false;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      std::vector<int> chunk(
          order.begin() + static_cast<long>(start),
          order.begin() + static_cast<long>(std::min(order.size(),
                                                     start + static_cast<size_t>(cfg.batch_size))));
      Tensor batch = make_batch(train, chunk);
      BatchAnnotations ann = assemble_batch_annotations(train, ann_cache, chunk, gh, gw);

      StepLoss sl;
      try {
        ForwardResult fr = forward_with_features(model, batch, /*train=*/true,
                                                 /*input_grad=*/cfg.method == RefineMethod::rrr);
        sl = method_loss(cfg.method, fr, ann, cfg.coeffs, cfg.intersect_eps);
        if (!std::isfinite(sl.breakdown.total)) throw NumericError("refine: non-finite total loss");
        auto grads = ad::grad(sl.total, fr.param_vars);
        std::vector<Tensor> grad_tensors;
        grad_tensors.reserve(grads.size());
        for (auto& g : grads) grad_tensors.push_back(g->value);
        opt.step(model.params, grad_tensors);
      } catch (const NumericError& e) {
        std::fprintf(stderr, "[refine] %s at epoch %d step %lld; rolling back to last checkpoint\n",
                     e.what(), epoch, step);
        model.params.clear();
        for (const auto& p : last_good) model.params.push_back(p.clone());
        trace.aborted_non_finite = true;
        aborted = true;
        break;
      }

      mean.ce += sl.breakdown.ce;
      mean.expl += sl.breakdown.expl;
      mean.reg += sl.breakdown.reg;
      mean.total += sl.breakdown.total;
      if (losses_csv.is_open()) {
        char row[160];
        std::snprintf(row, sizeof row, "%lld,%.8f,%.8f,%.8f,%.8f\n", step, sl.breakdown.ce,
                      sl.breakdown.expl, sl.breakdown.reg, sl.breakdown.total);
        losses_csv << row;
      }
      ++step;
      ++steps_in_epoch;
    }
    if (aborted) break;

    mean.ce /= static_cast<double>(steps_in_epoch);
    mean.expl /= static_cast<double>(steps_in_epoch);
    mean.reg /= static_cast<double>(steps_in_epoch);
    mean.total /= static_cast<double>(steps_in_epoch);

    EpochStats stats;
    stats.mean = mean;
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.track_accuracy && clean_test && !clean_test->empty())
      stats.clean_test_accuracy = accuracy(model, *clean_test);
    trace.epochs.push_back(std::move(stats));

    last_good.clear();
    for (const auto& p : model.params) last_good.push_back(p.clone());

    if (cfg.verbose)
      std::fprintf(stderr, "[refine %s] epoch %d ce=%.4f expl=%.4f total=%.4f (%.1fs)\n",
                   refine_method_name(cfg.method), epoch, mean.ce, mean.expl, mean.total,
                   trace.epochs.back().seconds);

    if (!cfg.artifact_dir.empty()) {
      ModelHandle snapshot;
      snapshot.model = model;
      snapshot.provenance = handle.provenance;
      snapshot.provenance.method = refine_method_name(cfg.method);
      snapshot.provenance.epochs = epoch + 1;
      save_checkpoint(cfg.artifact_dir + "/checkpoint", snapshot);
      trace.checkpoint_dir = cfg.artifact_dir + "/checkpoint";
    }

    if (cfg.stop_loss && mean.total <= *cfg.stop_loss) break;
  }

  ModelHandle out;
  out.model = std::move(model);
  out.provenance = handle.provenance;
  out.provenance.method = refine_method_name(cfg.method);
  out.provenance.epochs = static_cast<int>(trace.epochs.size());
  out.provenance.seed = cfg.seed;

  if (!cfg.artifact_dir.empty()) write_trace_csv(cfg.artifact_dir + "/trace.csv", trace);
  return {std::move(out), std::move(trace)};
}

void write_trace_csv(const std::string& path, const RefineTrace& trace) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "epoch,ce,expl,reg,total,seconds,clean_test_accuracy\n";
  char row[200];
  for (size_t e = 0; e < trace.epochs.size(); ++e) {
    const auto& s = trace.epochs[e];
    std::snprintf(row, sizeof row, "%zu,%.8f,%.8f,%.8f,%.8f,%.3f,", e, s.mean.ce, s.mean.expl,
                  s.mean.reg, s.mean.total, s.seconds);
    f << row;
    if (s.clean_test_accuracy) {
      std::snprintf(row, sizeof row, "%.6f", *s.clean_test_accuracy);
      f << row;
    }
    f << '\n';
  }
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace xbld
