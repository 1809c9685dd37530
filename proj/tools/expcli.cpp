// expcli: experiment pipeline driver — decoy dataset generation, training,
// explanation-based refinement, saliency evaluation, and report emission.
//
// Exit codes: 0 success, 1 validation error, 2 stage failure, 3 partial report.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xbld/config.hpp"
#include "xbld/dataset.hpp"
#include "xbld/errors.hpp"
#include "xbld/gradcam.hpp"
#include "xbld/metrics.hpp"
#include "xbld/model.hpp"
#include "xbld/refine.hpp"
#include "xbld/report.hpp"
#include "xbld/rng.hpp"
#include "xbld/sources.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xbld;

namespace {

constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kStageFailure = 2;
constexpr int kPartialReport = 3;

/// XBLD_DEVICE selects the compute backend (auto | scalar | avx2); it maps
/// onto the kernel dispatcher, which reads XBLD_KERNELS at first use.
void apply_device_env() {
  const char* dev = std::getenv("XBLD_DEVICE");
  if (!dev || !*dev) return;
  const std::string d = dev;
  if (d == "auto" || d == "cpu") return;
  if (d == "scalar" || d == "cpu-scalar") {
    setenv("XBLD_KERNELS", "scalar", 1);
    return;
  }
  if (d == "avx2" || d == "cpu-avx2") {
    setenv("XBLD_KERNELS", "avx2", 1);
    return;
  }
  throw ValueError("XBLD_DEVICE must be auto|scalar|avx2 (got '" + d + "')");
}

MaskStrategy make_strategy(const std::string& name, double tau, int patch_size) {
  if (name == "intensity_threshold") return MaskStrategy::intensity_threshold(tau);
  if (name == "complement_of_corners") return MaskStrategy::complement_of_corners(patch_size);
  if (name == "provided_segmentation") {
    MaskStrategy s;
    s.kind = MaskStrategy::Kind::provided_segmentation;
    return s;  // per-instance masks come from the source dataset
  }
  throw ValueError("unknown mask strategy '" + name + "'");
}

struct DecoyArgs {
  std::string dataset, out, strategy = "intensity_threshold", cache;
  uint64_t seed = 0;
  int patch_size = 4, train_limit = 0, test_limit = 0;
  double tau = 0.1;
};

DecoyDatasetManifest run_decoy_stage(const DecoyArgs& a) {
  SourceOptions opts;
  opts.cache_dir = a.cache;
  opts.train_limit = a.train_limit;
  opts.test_limit = a.test_limit;
  SourceDataset src = open_source(a.dataset, opts);
  DecoyParams params;
  params.patch_size = a.patch_size;
  params.seed = a.seed;
  params.strategy = make_strategy(a.strategy, a.tau, a.patch_size);
  DecoyDatasetManifest manifest = build_decoy_dataset(src, params, a.out);
  std::printf("decoy: wrote %zu instances to %s\n", manifest.records.size(), a.out.c_str());
  return manifest;
}

struct TrainArgs {
  std::string preset, data, out;
  int epochs = 20, batch_size = 32;
  uint64_t seed = 0;
  std::optional<double> stop_loss;
  bool verbose = false;
};

void run_train_stage(const TrainArgs& a) {
  DecoyDatasetManifest manifest = load_manifest(a.data);
  std::vector<DecoyInstance> train = load_split(manifest, "train");
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.seed = a.seed;
  cfg.stop_loss = a.stop_loss;
  cfg.verbose = a.verbose;
  ModelHandle handle = fit_unrefined(preset(a.preset), train, manifest.name, cfg);
  save_checkpoint(a.out, handle);
  std::printf("train: %s (%d epochs kept) -> %s\n", a.preset.c_str(), handle.provenance.epochs,
              a.out.c_str());
}

struct RefineArgs {
  std::string checkpoint, data, method = "xbl_d", out;
  int epochs = 50, batch_size = 32;
  double lambda1 = 2.7, lambda2 = 0.1, lambda = 1e-5;
  std::optional<double> stop_loss;
  uint64_t seed = 0;
  bool verbose = false;
};

int run_refine_stage(const RefineArgs& a) {
  ModelHandle handle = load_checkpoint(a.checkpoint);
  DecoyDatasetManifest manifest = load_manifest(a.data);
  std::vector<DecoyInstance> train = load_split(manifest, "train");
  RefineConfig cfg;
  cfg.method = refine_method_from_name(a.method);
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.coeffs = {a.lambda1, a.lambda2, a.lambda};
  cfg.stop_loss = a.stop_loss;
  cfg.seed = a.seed;
  cfg.verbose = a.verbose;
  cfg.artifact_dir = a.out;
  auto [refined, trace] = refine(handle, train, cfg);
  if (trace.aborted_non_finite) {
    std::fprintf(stderr, "refine: aborted on non-finite loss; last good checkpoint kept at %s\n",
                 trace.checkpoint_dir.c_str());
    return kStageFailure;
  }
  if (trace.checkpoint_dir.empty()) save_checkpoint(a.out + "/checkpoint", refined);
  std::printf("refine(%s): %zu epoch(s), final total=%.6f -> %s/checkpoint\n", a.method.c_str(),
              trace.epochs.size(), trace.epochs.back().mean.total, a.out.c_str());
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, out, method_label;
  int limit = 0;
  double reference_threshold = 40.0;
  bool curves_only = false;  // sweep subcommand: skip accuracy
};

double value_at_threshold(const MetricCurve& curve, double t) {
  for (size_t i = 0; i < curve.thresholds.size(); ++i)
    if (curve.thresholds[i] == t) return curve.values[i];
  return std::numeric_limits<double>::quiet_NaN();
}

void run_eval_stage(const EvalArgs& a) {
  ModelHandle handle = load_checkpoint(a.checkpoint);
  DecoyDatasetManifest manifest = load_manifest(a.data);
  std::vector<DecoyInstance> test = load_split(manifest, "test");
  if (a.limit > 0 && static_cast<size_t>(a.limit) < test.size())
    test.resize(static_cast<size_t>(a.limit));
  if (test.empty()) throw ValueError("evaluate: empty test split");

  const std::string method =
      a.method_label.empty() ? handle.provenance.method : a.method_label;

  // Explanations target the instance's true class, at input resolution.
  std::vector<int> targets;
  targets.reserve(test.size());
  for (const auto& inst : test) targets.push_back(inst.image.label);
  std::vector<SaliencyMap> cams = batch_grad_cam(handle.model, test, targets);
  std::vector<SaliencyMap> expls;
  std::vector<BinaryMask> obj_masks;
  expls.reserve(test.size());
  obj_masks.reserve(test.size());
  for (size_t i = 0; i < test.size(); ++i) {
    expls.push_back(upsample(cams[i], handle.model.spec.input_h, handle.model.spec.input_w));
    obj_masks.push_back(test[i].obj_mask);
  }
  SweepResult sw = sweep(expls, obj_masks);

  fs::create_directories(a.out);
  sw.ar.method = method;
  sw.ap.method = method;
  write_curves_csv(a.out + "/curves.csv", {sw.ar, sw.ap});

  json j;
  j["dataset"] = manifest.name;
  j["method"] = method;
  j["seed"] = handle.provenance.seed;
  j["n_eval_instances"] = test.size();
  j["excluded_from_ar"] = sw.excluded_from_ar;
  j["reference_threshold"] = a.reference_threshold;
  j["thresholds"] = sw.ar.thresholds;
  j["ar"] = sw.ar.values;
  j["ap"] = sw.ap.values;
  j["ar_n"] = sw.ar.n_instances;
  j["ap_n"] = sw.ap.n_instances;
  j["summary_ar"] = value_at_threshold(sw.ar, a.reference_threshold);
  j["summary_ap"] = value_at_threshold(sw.ap, a.reference_threshold);
  if (!a.curves_only) {
    const double acc = accuracy(handle.model, test);
    j["accuracy"] = acc;
    std::printf("evaluate(%s): accuracy=%.4f AR@%g=%.4f AP@%g=%.4f (n=%zu)\n", method.c_str(),
                acc, a.reference_threshold, j["summary_ar"].get<double>(), a.reference_threshold,
                j["summary_ap"].get<double>(), test.size());
  } else {
    std::printf("sweep(%s): AR@%g=%.4f AP@%g=%.4f (n=%zu)\n", method.c_str(),
                a.reference_threshold, j["summary_ar"].get<double>(), a.reference_threshold,
                j["summary_ap"].get<double>(), test.size());
  }
  std::ofstream f(a.out + "/eval.json");
  if (!f) throw IoError("cannot open " + a.out + "/eval.json");
  f << j.dump(2) << '\n';
}

MethodResult method_result_from_eval_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  json j = json::parse(f);
  MethodResult r;
  r.method = j.at("method").get<std::string>();
  if (j.contains("accuracy")) r.accuracy = j.at("accuracy").get<double>();
  r.summary_ar = j.value("summary_ar", std::numeric_limits<double>::quiet_NaN());
  r.summary_ap = j.value("summary_ap", std::numeric_limits<double>::quiet_NaN());
  const auto thresholds = j.at("thresholds").get<std::vector<double>>();
  r.ar.metric = MetricKind::AR;
  r.ar.method = r.method;
  r.ar.thresholds = thresholds;
  r.ar.values = j.at("ar").get<std::vector<double>>();
  r.ar.n_instances = j.at("ar_n").get<std::vector<int>>();
  r.ap.metric = MetricKind::AP;
  r.ap.method = r.method;
  r.ap.thresholds = thresholds;
  r.ap.values = j.at("ap").get<std::vector<double>>();
  r.ap.n_instances = j.at("ap_n").get<std::vector<int>>();
  return r;
}

struct ReportArgs {
  std::string dataset, out;
  double reference_threshold = 40.0;
  std::vector<std::string> evals;  // method=eval_dir
};

int run_report_stage(const ReportArgs& a) {
  ReportInputs inputs;
  inputs.dataset = a.dataset;
  inputs.reference_threshold = a.reference_threshold;
  for (const auto& spec : a.evals) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos)
      throw ValueError("--eval expects method=dir, got '" + spec + "'");
    MethodResult r = method_result_from_eval_json(spec.substr(eq + 1) + "/eval.json");
    r.method = spec.substr(0, eq);
    r.ar.method = r.method;
    r.ap.method = r.method;
    inputs.methods.push_back(std::move(r));
  }
  ReportStatus status = emit_report(inputs, a.out);
  if (!status.complete) {
    std::fprintf(stderr, "report: emitted with %zu gap(s):\n", status.gaps.size());
    for (const auto& g : status.gaps) std::fprintf(stderr, "  - %s\n", g.c_str());
    return kPartialReport;
  }
  std::printf("report: complete -> %s\n", a.out.c_str());
  return kOk;
}

struct GalleryArgs {
  std::string checkpoint, data, out, split = "test";
  int count = 8;
  uint64_t seed = 0;
};

void run_gallery_stage(const GalleryArgs& a) {
  ModelHandle handle = load_checkpoint(a.checkpoint);
  DecoyDatasetManifest manifest = load_manifest(a.data);
  std::vector<DecoyInstance> pool = load_split(manifest, a.split);
  if (pool.empty()) throw ValueError("gallery: empty split '" + a.split + "'");
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(Rng::derive(a.seed, 0x9a11));
  rng.shuffle(order);
  const size_t n = std::min(pool.size(), static_cast<size_t>(std::max(a.count, 1)));
  std::vector<DecoyInstance> sample;
  sample.reserve(n);
  for (size_t i = 0; i < n; ++i) sample.push_back(pool[static_cast<size_t>(order[i])]);
  auto files = saliency_gallery(handle.model, sample, a.out);
  std::printf("gallery: wrote %zu image(s) to %s\n", files.size(), a.out.c_str());
}

struct PipelineArgs {
  std::string config_path, cache;
  std::vector<std::string> overrides;
  bool verbose = false;
};

int run_pipeline(const PipelineArgs& a) {
  ConfigMap cfg = load_config_file(a.config_path);
  for (const auto& kv : a.overrides) apply_override(cfg, kv);
  ExperimentConfig ec = ExperimentConfig::from_map(cfg);

  const std::string run_dir = ec.output_root + "/" + ec.run_id();
  fs::create_directories(run_dir);
  {
    std::ofstream f(run_dir + "/config.txt");
    f << canonical_config(cfg);
  }
  std::printf("pipeline: run %s\n", run_dir.c_str());

  std::string stage = "decoy";
  try {
    // Stage 1: decoy dataset (reused when the manifest already exists).
    const std::string data_dir = run_dir + "/dataset";
    if (fs::exists(data_dir + "/manifest.jsonl")) {
      std::printf("pipeline: reusing %s\n", data_dir.c_str());
    } else {
      DecoyArgs d;
      d.dataset = ec.dataset;
      d.out = data_dir;
      d.seed = ec.seed;
      d.patch_size = ec.patch_size;
      d.strategy = ec.mask_strategy;
      d.tau = ec.tau;
      d.train_limit = ec.train_limit;
      d.test_limit = ec.test_limit;
      d.cache = a.cache;
      run_decoy_stage(d);
    }

    // Stage 2: unrefined training.
    stage = "train";
    const std::string train_ckpt = run_dir + "/train/checkpoint";
    if (fs::exists(train_ckpt + "/meta.json")) {
      std::printf("pipeline: reusing %s\n", train_ckpt.c_str());
    } else {
      TrainArgs t;
      t.preset = ec.preset;
      t.data = data_dir;
      t.out = train_ckpt;
      t.epochs = ec.train_epochs;
      t.batch_size = ec.batch_size;
      t.seed = ec.seed;
      t.verbose = a.verbose;
      run_train_stage(t);
    }

    // Stage 3: refinement per method.
    for (const auto& m : ec.methods) {
      stage = "refine:" + m;
      const std::string rdir = run_dir + "/refine_" + m;
      if (fs::exists(rdir + "/trace.csv") && fs::exists(rdir + "/checkpoint/meta.json")) {
        std::printf("pipeline: reusing %s\n", rdir.c_str());
        continue;
      }
      RefineArgs r;
      r.checkpoint = train_ckpt;
      r.data = data_dir;
      r.method = m;
      r.out = rdir;
      r.epochs = ec.refine_epochs;
      r.batch_size = ec.batch_size;
      r.lambda1 = ec.lambda1;
      r.lambda2 = ec.lambda2;
      r.lambda = ec.lambda;
      r.stop_loss = ec.stop_loss;
      r.seed = ec.seed;
      r.verbose = a.verbose;
      if (int rc = run_refine_stage(r); rc != kOk) return rc;
    }

    // Stage 4: evaluation (unrefined + each refined model).
    std::vector<std::pair<std::string, std::string>> eval_dirs;  // method, dir
    std::vector<std::pair<std::string, std::string>> ckpts = {{"unrefined", train_ckpt}};
    for (const auto& m : ec.methods) ckpts.emplace_back(m, run_dir + "/refine_" + m + "/checkpoint");
    for (const auto& [m, ckpt] : ckpts) {
      stage = "evaluate:" + m;
      const std::string edir = run_dir + "/eval_" + m;
      eval_dirs.emplace_back(m, edir);
      if (fs::exists(edir + "/eval.json")) {
        std::printf("pipeline: reusing %s\n", edir.c_str());
        continue;
      }
      EvalArgs e;
      e.checkpoint = ckpt;
      e.data = data_dir;
      e.out = edir;
      e.method_label = m;
      e.limit = ec.eval_limit;
      e.reference_threshold = ec.reference_threshold;
      run_eval_stage(e);
    }

    // Stage 5: report (cheap; regenerated every run for consistency).
    stage = "report";
    ReportArgs rep;
    rep.dataset = ec.dataset == "fmnist" || ec.dataset == "cifar10"
                      ? ec.dataset
                      : (ec.preset == "coco2" ? "coco2" : ec.dataset);
    rep.out = run_dir + "/report";
    rep.reference_threshold = ec.reference_threshold;
    for (const auto& [m, dir] : eval_dirs) rep.evals.push_back(m + "=" + dir);
    const int report_rc = run_report_stage(rep);

    // Stage 6: optional saliency gallery from the first refined model.
    if (ec.gallery_count > 0) {
      stage = "gallery";
      GalleryArgs g;
      g.checkpoint = run_dir + "/refine_" + ec.methods.front() + "/checkpoint";
      g.data = data_dir;
      g.out = run_dir + "/gallery";
      g.count = ec.gallery_count;
      g.seed = ec.seed;
      run_gallery_stage(g);
    }
    return report_rc;
  } catch (const Error& e) {
    std::fprintf(stderr, "pipeline: stage '%s' failed: %s\n", stage.c_str(), e.what());
    std::fprintf(stderr, "pipeline: completed artifacts kept under %s\n", run_dir.c_str());
    return kStageFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Explanation-based learning experiments: decoy datasets, CNN training, "
      "distance-aware explanation refinement, and saliency evaluation."};
  app.require_subcommand(1);
  int rc = kOk;

  DecoyArgs decoy_args;
  auto* decoy = app.add_subcommand("decoy", "Build a decoyed dataset with known masks");
  decoy->add_option("--dataset", decoy_args.dataset,
                    "fmnist | cifar10 | local PNG directory")->required();
  decoy->add_option("--out", decoy_args.out, "output dataset directory")->required();
  decoy->add_option("--seed", decoy_args.seed, "RNG seed")->required();
  decoy->add_option("--patch-size", decoy_args.patch_size, "confounder side length");
  decoy->add_option("--strategy", decoy_args.strategy,
                    "intensity_threshold | complement_of_corners | provided_segmentation");
  decoy->add_option("--tau", decoy_args.tau, "intensity threshold");
  decoy->add_option("--train-limit", decoy_args.train_limit, "cap train instances (0 = all)");
  decoy->add_option("--test-limit", decoy_args.test_limit, "cap test instances (0 = all)");
  decoy->add_option("--cache", decoy_args.cache, "dataset cache dir (default: XBLD_DATA_DIR)");
  decoy->callback([&] { run_decoy_stage(decoy_args); });

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Cross-entropy training on a decoyed dataset");
  train->add_option("--preset", train_args.preset, "fmnist | cifar10 | coco2 | fmnist_desk")
      ->required();
  train->add_option("--data", train_args.data, "decoy dataset directory")->required();
  train->add_option("--epochs", train_args.epochs, "epoch budget");
  train->add_option("--batch-size", train_args.batch_size, "minibatch size");
  train->add_option("--seed", train_args.seed, "RNG seed")->required();
  train->add_option("--out", train_args.out, "checkpoint output directory")->required();
  double train_stop = 0.0;
  auto* ts = train->add_option("--stop-loss", train_stop, "early-stop mean CE");
  train->add_flag("--verbose", train_args.verbose, "per-epoch progress");
  train->callback([&] {
    if (ts->count()) train_args.stop_loss = train_stop;
    run_train_stage(train_args);
  });

  RefineArgs refine_args;
  auto* ref = app.add_subcommand("refine", "Explanation-based refinement of a checkpoint");
  ref->add_option("--checkpoint", refine_args.checkpoint, "unrefined checkpoint dir")->required();
  ref->add_option("--data", refine_args.data, "decoy dataset directory")->required();
  ref->add_option("--method", refine_args.method, "xbl_d | rrr | rrr_g");
  ref->add_option("--epochs", refine_args.epochs, "refinement epochs");
  ref->add_option("--batch-size", refine_args.batch_size, "minibatch size");
  ref->add_option("--lambda1", refine_args.lambda1, "classification loss coefficient");
  ref->add_option("--lambda2", refine_args.lambda2, "explanation loss coefficient");
  ref->add_option("--lambda", refine_args.lambda, "weight decay coefficient");
  ref->add_option("--seed", refine_args.seed, "RNG seed")->required();
  ref->add_option("--out", refine_args.out, "artifact directory")->required();
  double refine_stop = 0.0;
  auto* rs = ref->add_option("--stop-loss", refine_stop, "early-stop mean total loss");
  ref->add_flag("--verbose", refine_args.verbose, "per-epoch progress");
  ref->callback([&] {
    if (rs->count()) refine_args.stop_loss = refine_stop;
    rc = run_refine_stage(refine_args);
  });

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("evaluate", "Accuracy plus AR/AP sweep on the clean test split");
  ev->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint dir")->required();
  ev->add_option("--data", eval_args.data, "decoy dataset directory")->required();
  ev->add_option("--out", eval_args.out, "output directory (eval.json, curves.csv)")->required();
  ev->add_option("--method-label", eval_args.method_label, "series label (default: provenance)");
  ev->add_option("--limit", eval_args.limit, "cap evaluated instances (0 = all)");
  ev->add_option("--reference-threshold", eval_args.reference_threshold,
                 "summary threshold percent");
  ev->callback([&] { run_eval_stage(eval_args); });

  EvalArgs sweep_args;
  sweep_args.curves_only = true;
  auto* sw = app.add_subcommand("sweep", "AR/AP threshold sweep only (no accuracy)");
  sw->add_option("--checkpoint", sweep_args.checkpoint, "model checkpoint dir")->required();
  sw->add_option("--data", sweep_args.data, "decoy dataset directory")->required();
  sw->add_option("--out", sweep_args.out, "output directory")->required();
  sw->add_option("--method-label", sweep_args.method_label, "series label");
  sw->add_option("--limit", sweep_args.limit, "cap evaluated instances (0 = all)");
  sw->add_option("--reference-threshold", sweep_args.reference_threshold,
                 "summary threshold percent");
  sw->callback([&] { run_eval_stage(sweep_args); });

  ReportArgs report_args;
  auto* rep = app.add_subcommand("report", "Aggregate evaluations into CSVs + comparison text");
  rep->add_option("--dataset", report_args.dataset, "dataset key (fmnist|cifar10|coco2|name)")
      ->required();
  rep->add_option("--out", report_args.out, "report output directory")->required();
  rep->add_option("--eval", report_args.evals, "method=eval_dir (repeatable)")
      ->required()
      ->expected(-1);
  rep->add_option("--reference-threshold", report_args.reference_threshold,
                  "summary threshold percent");
  rep->callback([&] { rc = run_report_stage(report_args); });

  PipelineArgs pipeline_args;
  auto* pipe = app.add_subcommand("pipeline", "decoy -> train -> refine -> evaluate -> report");
  pipe->add_option("--config", pipeline_args.config_path, "flat key=value config file")
      ->required();
  pipe->add_option("--set", pipeline_args.overrides, "key=value override (repeatable)")
      ->expected(-1);
  pipe->add_option("--cache", pipeline_args.cache, "dataset cache dir");
  pipe->add_flag("--verbose", pipeline_args.verbose, "per-epoch progress");
  pipe->callback([&] { rc = run_pipeline(pipeline_args); });

  GalleryArgs gallery_args;
  auto* gal = app.add_subcommand("gallery", "Saliency gallery images (input/overlay/masks)");
  gal->add_option("--checkpoint", gallery_args.checkpoint, "model checkpoint dir")->required();
  gal->add_option("--data", gallery_args.data, "decoy dataset directory")->required();
  gal->add_option("--out", gallery_args.out, "gallery output directory")->required();
  gal->add_option("--count", gallery_args.count, "instances to sample");
  gal->add_option("--seed", gallery_args.seed, "sampling seed");
  gal->add_option("--split", gallery_args.split, "train | test");
  gal->callback([&] { run_gallery_stage(gallery_args); });

  try {
    apply_device_env();
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationError;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kStageFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kStageFailure;
  }
  return rc;
}
