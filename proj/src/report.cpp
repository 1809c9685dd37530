#include "xbld/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "xbld/errors.hpp"
#include "xbld/gradcam.hpp"
#include "xbld/image.hpp"

namespace xbld {

namespace fs = std::filesystem;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

const ReferenceConstants& paper_references() {
  // Published full-scale results, transcribed verbatim. NaN marks cells the
  // publication leaves blank. The CIFAR-10 AP summary is quoted at threshold
  // 95% in the original text; all other summary cells are at threshold 40%.
  static const ReferenceConstants refs = {
      {
          {"Unrefined", 0.862, 0.789, 0.845},
          {"XBL-D", 0.904, 0.843, 0.938},
          {"RRR", 0.894, 0.810, 0.853},
          {"RRR-G", 0.786, kNaN, kNaN},
          {"RBR", 0.876, kNaN, kNaN},
          {"CDEP", 0.767, kNaN, kNaN},
          {"HINT", 0.582, kNaN, kNaN},
          {"CE", 0.858, kNaN, kNaN},
      },
      {
          {"AR", "Unrefined", 0.280, 0.419, 0.500},
          {"AR", "XBL-D", 0.557, 0.516, 0.860},
          {"AR", "RRR", 0.335, 0.432, 0.841},
          {"AP", "Unrefined", 0.318, 0.168, 0.609},
          {"AP", "XBL-D", 0.663, 0.342, 0.698},
          {"AP", "RRR", 0.425, 0.181, 0.761},
      },
      "classification accuracy on original test images (published, full scale)",
      "summary evaluations of explanations (published, full scale)",
  };
  return refs;
}

std::string method_display_name(const std::string& key) {
  if (key == "unrefined") return "Unrefined";
  if (key == "xbl_d") return "XBL-D";
  if (key == "rrr") return "RRR";
  if (key == "rrr_g") return "RRR-G";
  if (key == "rbr") return "RBR";
  if (key == "cdep") return "CDEP";
  if (key == "hint") return "HINT";
  if (key == "ce") return "CE";
  return key;
}

namespace {

double pick_dataset(const std::string& dataset_key, double fmnist, double cifar10, double coco2) {
  if (dataset_key == "fmnist") return fmnist;
  if (dataset_key == "cifar10") return cifar10;
  if (dataset_key == "coco2") return coco2;
  return kNaN;
}

std::string fmt_or_empty(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_or(double v, const char* placeholder) {
  if (std::isnan(v)) return placeholder;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

double reference_accuracy(const std::string& dataset_key, const std::string& method_key) {
  const std::string label = method_display_name(method_key);
  for (const auto& row : paper_references().accuracy)
    if (label == row.method) return pick_dataset(dataset_key, row.fmnist, row.cifar10, row.coco2);
  return kNaN;
}

double reference_summary(const std::string& metric, const std::string& dataset_key,
                         const std::string& method_key) {
  const std::string label = method_display_name(method_key);
  for (const auto& row : paper_references().summary)
    if (metric == row.metric && label == row.method)
      return pick_dataset(dataset_key, row.fmnist, row.cifar10, row.coco2);
  return kNaN;
}

ReportStatus emit_report(const ReportInputs& results, const std::string& out_dir) {
  if (results.methods.empty()) throw ValueError("emit_report: no method results");
  bool any_content = false;
  for (const auto& m : results.methods)
    if (!std::isnan(m.accuracy) || !m.ar.values.empty() || !m.ap.values.empty())
      any_content = true;
  if (!any_content) throw ValueError("emit_report: all method results are empty");

  fs::create_directories(out_dir);
  ReportStatus status;
  auto gap = [&](const std::string& what) {
    status.complete = false;
    status.gaps.push_back(what);
  };

  {
    std::ofstream f(out_dir + "/accuracy.csv");
    if (!f) throw IoError("cannot open " + out_dir + "/accuracy.csv");
    f << "method,dataset,accuracy,reference_accuracy_paper_full_scale\n";
    for (const auto& m : results.methods) {
      if (std::isnan(m.accuracy)) gap("accuracy for method " + m.method);
      f << m.method << ',' << results.dataset << ',' << fmt_or_empty(m.accuracy) << ','
        << fmt_or_empty(reference_accuracy(results.dataset, m.method)) << '\n';
    }
  }

  {
    std::ofstream f(out_dir + "/summary_ar_ap.csv");
    if (!f) throw IoError("cannot open " + out_dir + "/summary_ar_ap.csv");
    f << "metric,method,dataset,value,reference_paper_full_scale\n";
    for (const char* metric : {"AR", "AP"}) {
      for (const auto& m : results.methods) {
        const double v = std::string(metric) == "AR" ? m.summary_ar : m.summary_ap;
        if (std::isnan(v)) gap(std::string(metric) + " summary for method " + m.method);
        f << metric << ',' << m.method << ',' << results.dataset << ',' << fmt_or_empty(v) << ','
          << fmt_or_empty(reference_summary(metric, results.dataset, m.method)) << '\n';
      }
    }
  }

  {
    std::vector<MetricCurve> curves;
    for (const auto& m : results.methods) {
      if (m.ar.values.empty() && m.ap.values.empty()) {
        gap("curves for method " + m.method);
        continue;
      }
      for (const MetricCurve* c : {&m.ar, &m.ap}) {
        if (c->values.empty()) continue;
        MetricCurve labeled = *c;
        labeled.method = m.method;
        curves.push_back(std::move(labeled));
      }
    }
    write_curves_csv(out_dir + "/curves.csv", curves);
  }

  {
    std::ofstream f(out_dir + "/comparison.txt");
    if (!f) throw IoError("cannot open " + out_dir + "/comparison.txt");
    char line[256];
    f << "Evaluation summary - dataset: " << results.dataset << " (desk scale)\n";
    std::snprintf(line, sizeof line, "Reference threshold: %g%%\n\n", results.reference_threshold);
    f << line;

    f << "Classification accuracy (clean test set)\n";
    f << "  method       computed   [paper, full scale]\n";
    for (const auto& m : results.methods) {
      std::snprintf(line, sizeof line, "  %-11s  %-9s  %s\n", m.method.c_str(),
                    fmt_or(m.accuracy, "(missing)").c_str(),
                    fmt_or(reference_accuracy(results.dataset, m.method), "-").c_str());
      f << line;
    }

    std::snprintf(line, sizeof line, "\nAR / AP at threshold %g%%\n", results.reference_threshold);
    f << line;
    f << "  metric  method       computed   [paper, full scale]\n";
    for (const char* metric : {"AR", "AP"}) {
      for (const auto& m : results.methods) {
        const double v = std::string(metric) == "AR" ? m.summary_ar : m.summary_ap;
        std::snprintf(line, sizeof line, "  %-6s  %-11s  %-9s  %s\n", metric, m.method.c_str(),
                      fmt_or(v, "(missing)").c_str(),
                      fmt_or(reference_summary(metric, results.dataset, m.method), "-").c_str());
        f << line;
      }
    }

    const auto& refs = paper_references();
    f << "\nPublished full-scale reference values [paper, full scale]\n";
    f << "(" << refs.accuracy_citation << ")\n";
    f << "  method       fmnist   cifar10  coco2\n";
    for (const auto& row : refs.accuracy) {
      std::snprintf(line, sizeof line, "  %-11s  %-7s  %-7s  %s\n", row.method,
                    fmt_or(row.fmnist, "-").c_str(), fmt_or(row.cifar10, "-").c_str(),
                    fmt_or(row.coco2, "-").c_str());
      f << line;
    }
    f << "(" << refs.summary_citation << ")\n";
    f << "  metric  method       fmnist   cifar10  coco2\n";
    for (const auto& row : refs.summary) {
      std::snprintf(line, sizeof line, "  %-6s  %-11s  %-7s  %-7s  %s\n", row.metric, row.method,
                    fmt_or(row.fmnist, "-").c_str(), fmt_or(row.cifar10, "-").c_str(),
                    fmt_or(row.coco2, "-").c_str());
      f << line;
    }
    f << "\nDesk-scale runs are not expected to reproduce the full-scale reference values;\n"
         "the reference columns exist for orientation only and never feed computation.\n";
    if (!status.complete) {
      f << "\nGaps in this report:\n";
      for (const auto& g : status.gaps) f << "  - " << g << '\n';
    }
  }

  return status;
}

namespace {

/// Blue-to-red heat color for a normalized saliency value.
void heat_rgb(double v, double* rgb) {
  rgb[0] = v;
  rgb[1] = 0.15 * (1.0 - std::abs(2.0 * v - 1.0));
  rgb[2] = 1.0 - v;
}

}  // namespace

std::vector<std::string> saliency_gallery(const Model& model,
                                          const std::vector<DecoyInstance>& instances,
                                          const std::string& out_dir) {
  if (instances.empty()) throw ValueError("saliency_gallery: no instances");
  fs::create_directories(out_dir);
  const int h = model.spec.input_h, w = model.spec.input_w, c = model.spec.input_c;
  const int gap_px = 2;
  const int panels = 4;
  const int out_w = panels * w + (panels - 1) * gap_px;

  std::vector<std::string> written;
  for (const auto& inst : instances) {
    SaliencyMap cam = grad_cam(model, inst.image, inst.image.label);
    SaliencyMap up = upsample(cam, h, w);

    Tensor canvas({h, out_w, 3});
    for (size_t i = 0; i < canvas.numel(); ++i) canvas[i] = 0.5;  // gap gray
    auto panel_x = [&](int p) { return p * (w + gap_px); };
    auto at = [&](int y, int x, int ch) -> double& {
      return canvas[(static_cast<size_t>(y) * out_w + x) * 3 + ch];
    };
    auto gray_of = [&](int y, int x) {
      double g = 0.0;
      for (int ch = 0; ch < c; ++ch)
        g += inst.image.pixels[(static_cast<size_t>(y) * w + x) * c + ch];
      return g / c;
    };

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Panel 0: the input image.
        for (int ch = 0; ch < 3; ++ch)
          at(y, panel_x(0) + x, ch) =
              c == 3 ? inst.image.pixels[(static_cast<size_t>(y) * w + x) * 3 + ch] : gray_of(y, x);
        // Panel 1: saliency heat overlay on the input.
        double rgb[3];
        heat_rgb(up.values[static_cast<size_t>(y) * w + x], rgb);
        for (int ch = 0; ch < 3; ++ch)
          at(y, panel_x(1) + x, ch) = 0.5 * gray_of(y, x) + 0.5 * rgb[ch];
        // Panels 2 and 3: object and confounder masks.
        const double obj = inst.obj_mask.values[static_cast<size_t>(y) * w + x];
        const double con = inst.con_mask.values[static_cast<size_t>(y) * w + x];
        for (int ch = 0; ch < 3; ++ch) {
          at(y, panel_x(2) + x, ch) = obj;
          at(y, panel_x(3) + x, ch) = con;
        }
      }
    }

    const std::string path = out_dir + "/gallery_" + inst.id + ".png";
    write_png(path, tensor_to_image(canvas));
    written.push_back(path);
  }
  return written;
}

}  // namespace xbld
