#pragma once

#include <string>
#include <vector>

#include "xbld/dataset.hpp"
#include "xbld/metrics.hpp"
#include "xbld/model.hpp"

namespace xbld {

/// Published full-scale results, kept verbatim as annotated constants so
/// desk-scale runs can be reported next to them. Values never feed into any
/// computation; they appear only in explicitly labeled reference columns.
struct ReferenceConstants {
  struct AccuracyRow {
    const char* method;  // paper row label
    double fmnist, cifar10, coco2;  // NaN where the paper prints "-"
  };
  struct SummaryRef {
    const char* metric;  // "AR" | "AP"
    const char* method;
    double fmnist, cifar10, coco2;
  };
  std::vector<AccuracyRow> accuracy;   // classification accuracy on clean test sets
  std::vector<SummaryRef> summary;     // AR/AP summaries
  const char* accuracy_citation;
  const char* summary_citation;
};

/// The published constants (classification accuracy and AR/AP summaries).
const ReferenceConstants& paper_references();

/// Paper row label for a canonical method key ("xbl_d" -> "XBL-D"); returns
/// the key itself when unknown.
std::string method_display_name(const std::string& method_key);

/// Reference lookup by canonical keys; NaN when the paper has no entry.
double reference_accuracy(const std::string& dataset_key, const std::string& method_key);
double reference_summary(const std::string& metric, const std::string& dataset_key,
                         const std::string& method_key);

/// One refined (or unrefined) model's evaluation outputs. NaN / empty curves
/// mark gaps; the report is still emitted with gaps visible.
struct MethodResult {
  std::string method;  // canonical key: unrefined | xbl_d | rrr | rrr_g
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  MetricCurve ar, ap;  // sweep output (may be empty)
  double summary_ar = std::numeric_limits<double>::quiet_NaN();  // at reference threshold
  double summary_ap = std::numeric_limits<double>::quiet_NaN();
};

struct ReportInputs {
  std::string dataset;  // canonical key (fmnist|cifar10|coco2) or free-form name
  double reference_threshold = 40.0;
  std::vector<MethodResult> methods;
};

struct ReportStatus {
  bool complete = true;
  std::vector<std::string> gaps;  // human-readable descriptions of missing cells
};

/// Writes accuracy.csv, summary_ar_ap.csv, curves.csv, comparison.txt into
/// out_dir. Computed values and paper constants stay in separate columns;
/// the reference columns are labeled "paper_full_scale". Empty results are
/// refused with ValueError.
///
/// Schemas:
///   accuracy.csv       method,dataset,accuracy,reference_accuracy_paper_full_scale
///   summary_ar_ap.csv  metric,method,dataset,value,reference_paper_full_scale
///   curves.csv         method,metric,threshold,value,n_instances
ReportStatus emit_report(const ReportInputs& results, const std::string& out_dir);

/// Side-by-side gallery rows mirroring saliency inspection figures: input,
/// Grad-CAM overlay upsampled to input resolution, object mask, confounder
/// mask. One PNG per instance, named gallery_<id>.png.
std::vector<std::string> saliency_gallery(const Model& model,
                                          const std::vector<DecoyInstance>& instances,
                                          const std::string& out_dir);

}  // namespace xbld
