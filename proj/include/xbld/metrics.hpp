#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xbld/dataset.hpp"
#include "xbld/gradcam.hpp"
#include "xbld/model.hpp"

namespace xbld {

/// Binarized saliency map: support = {p : expl(p) >= percentile_t(expl)}.
struct ThresholdedMap {
  BinaryMask values;
  double threshold = 0.0;  // percent in [0,100)
  std::string source_map_id;
};

enum class MetricKind { AR, AP };
const char* metric_name(MetricKind m);

struct MetricCurve {
  std::vector<double> thresholds;   // strictly increasing
  std::vector<double> values;       // in [0,1], aligned with thresholds
  std::vector<int> n_instances;     // contributing instances per threshold
  MetricKind metric = MetricKind::AR;
  std::string method;
};

/// {40, 45, ..., 95}: the evaluation sweep grid (12 points).
std::vector<double> default_threshold_grid();

/// t-th percentile with linear interpolation between order statistics.
double percentile(const std::vector<double>& values, double t);

/// Keeps pixels at or above the t-th percentile of the map's own values.
/// Ties are kept (>=), so constant maps threshold to all-ones.
ThresholdedMap percentile_threshold(const SaliencyMap& expl, double t);

/// |T and A_obj| / |T|. T is never empty, so this is always defined.
double activation_precision(const SaliencyMap& expl, const BinaryMask& obj_mask, double t);

/// |T and A_obj| / |A_obj|. Empty obj_mask raises EmptyMaskError; callers
/// exclude those instances.
double activation_recall(const SaliencyMap& expl, const BinaryMask& obj_mask, double t);

struct SweepResult {
  MetricCurve ar;
  MetricCurve ap;
  int excluded_from_ar = 0;  // instances with empty object masks
};

/// Dataset-mean AR and AP per threshold. Empty-object instances are
/// excluded from AR (undefined denominator) but kept in AP.
SweepResult sweep(const std::vector<SaliencyMap>& expls,
                  const std::vector<BinaryMask>& obj_masks,
                  const std::vector<double>& thresholds = default_threshold_grid());

/// Fraction of argmax predictions equal to labels. Empty set rejected.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);
double accuracy(const Model& model, const std::vector<DecoyInstance>& test_set);

struct EvalProvenance {
  std::string dataset;
  std::string method;
  uint64_t seed = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<MetricCurve> curves;
  double summary_ar = 0.0;  // at the reference threshold
  double summary_ap = 0.0;
  double reference_threshold = 40.0;
  EvalProvenance provenance;
};

/// Rows: method,metric,threshold,value,n_instances (one per curve point).
void write_curves_csv(const std::string& path, const std::vector<MetricCurve>& curves);

struct SummaryRow {
  std::string metric;   // "AR" | "AP" | "accuracy"
  std::string method;
  std::string dataset;
  double value = 0.0;
};

/// Rows: metric,method,dataset,value.
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

}  // namespace xbld
