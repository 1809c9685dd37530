#include "xbld/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "xbld/errors.hpp"

namespace xbld {

const char* metric_name(MetricKind m) { return m == MetricKind::AR ? "AR" : "AP"; }

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int t = 40; t <= 95; t += 5) grid.push_back(static_cast<double>(t));
  return grid;
}

double percentile(const std::vector<double>& values, double t) {
  if (values.empty()) throw ValueError("percentile: empty value set");
  if (t < 0.0 || t >= 100.0) throw ValueError("percentile: t must be in [0,100)");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double rank = t / 100.0 * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

ThresholdedMap percentile_threshold(const SaliencyMap& expl, double t) {
  const Tensor& v = expl.values;
  if (v.ndim() != 2) throw ShapeError("percentile_threshold: expected a [H,W] map");
  std::vector<double> flat(v.data(), v.data() + v.numel());
  const double cut = percentile(flat, t);
  ThresholdedMap out;
  out.threshold = t;
  out.values = BinaryMask::zeros(v.dim(0), v.dim(1));
  for (size_t i = 0; i < v.numel(); ++i) out.values.values[i] = v[i] >= cut ? 1.0 : 0.0;
  return out;
}

namespace {

struct Counts {
  size_t kept = 0;      // |T|
  size_t hits = 0;      // |T and A_obj|
  size_t relevant = 0;  // |A_obj|
};

Counts count_overlap(const SaliencyMap& expl, const BinaryMask& obj_mask, double t) {
  const Tensor& v = expl.values;
  if (v.ndim() != 2 || obj_mask.h() != v.dim(0) || obj_mask.w() != v.dim(1))
    throw ShapeError("activation metrics: map and mask shapes must match");
  ThresholdedMap tm = percentile_threshold(expl, t);
  Counts c;
  for (size_t i = 0; i < v.numel(); ++i) {
    const bool kept = tm.values.values[i] != 0.0;
    const bool rel = obj_mask.values[i] != 0.0;
    c.kept += kept;
    c.relevant += rel;
    c.hits += kept && rel;
  }
  return c;
}

}  // namespace

double activation_precision(const SaliencyMap& expl, const BinaryMask& obj_mask, double t) {
  Counts c = count_overlap(expl, obj_mask, t);
  return static_cast<double>(c.hits) / static_cast<double>(c.kept);
}

double activation_recall(const SaliencyMap& expl, const BinaryMask& obj_mask, double t) {
  Counts c = count_overlap(expl, obj_mask, t);
  if (c.relevant == 0) throw EmptyMaskError("activation_recall: empty object mask");
  return static_cast<double>(c.hits) / static_cast<double>(c.relevant);
}

SweepResult sweep(const std::vector<SaliencyMap>& expls, const std::vector<BinaryMask>& obj_masks,
                  const std::vector<double>& thresholds) {
  if (expls.size() != obj_masks.size()) throw ShapeError("sweep: misaligned inputs");
  if (expls.empty()) throw ValueError("sweep: no instances");
  if (thresholds.empty()) throw ValueError("sweep: no thresholds");
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] <= thresholds[i - 1])
      throw ValueError("sweep: thresholds must be strictly increasing");

  SweepResult out;
  out.ar.metric = MetricKind::AR;
  out.ap.metric = MetricKind::AP;
  for (size_t i = 0; i < expls.size(); ++i)
    if (obj_masks[i].empty()) ++out.excluded_from_ar;

  for (double t : thresholds) {
    double ar_sum = 0.0, ap_sum = 0.0;
    int ar_n = 0, ap_n = 0;
    for (size_t i = 0; i < expls.size(); ++i) {
      ap_sum += activation_precision(expls[i], obj_masks[i], t);
      ++ap_n;
      if (!obj_masks[i].empty()) {
        ar_sum += activation_recall(expls[i], obj_masks[i], t);
        ++ar_n;
      }
    }
    out.ap.thresholds.push_back(t);
    out.ap.values.push_back(ap_sum / ap_n);
    out.ap.n_instances.push_back(ap_n);
    out.ar.thresholds.push_back(t);
    out.ar.values.push_back(ar_n > 0 ? ar_sum / ar_n : 0.0);
    out.ar.n_instances.push_back(ar_n);
  }
  return out;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("accuracy: misaligned inputs");
  if (predictions.empty()) throw ValueError("accuracy: empty test set");
  size_t hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double accuracy(const Model& model, const std::vector<DecoyInstance>& test_set) {
  if (test_set.empty()) throw ValueError("accuracy: empty test set");
  Tensor logits = infer_logits(model, test_set);
  std::vector<int> preds = predict_labels(logits);
  std::vector<int> labels;
  labels.reserve(test_set.size());
  for (const auto& inst : test_set) labels.push_back(inst.image.label);
  return accuracy(preds, labels);
}

void write_curves_csv(const std::string& path, const std::vector<MetricCurve>& curves) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "method,metric,threshold,value,n_instances\n";
  char buf[64];
  for (const auto& c : curves) {
    for (size_t i = 0; i < c.thresholds.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%g,%.6f,%d", c.thresholds[i], c.values[i],
                    c.n_instances.empty() ? 0 : c.n_instances[i]);
      f << c.method << ',' << metric_name(c.metric) << ',' << buf << '\n';
    }
  }
  if (!f) throw IoError("failed writing " + path);
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "metric,method,dataset,value\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.value);
    f << r.metric << ',' << r.method << ',' << r.dataset << ',' << buf << '\n';
  }
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace xbld
