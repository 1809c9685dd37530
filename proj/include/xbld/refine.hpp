#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xbld/losses.hpp"
#include "xbld/model.hpp"

namespace xbld {

enum class RefineMethod { xbl_d, rrr, rrr_g };

const char* refine_method_name(RefineMethod m);
RefineMethod refine_method_from_name(const std::string& name);

struct RefineConfig {
  RefineMethod method = RefineMethod::xbl_d;
  int epochs = 50;
  LossCoefficients coeffs;
  std::optional<double> stop_loss;  // sigma: stop once epoch-mean total <= sigma
  uint64_t seed = 0;
  int batch_size = 32;
  bool track_accuracy = false;      // per-epoch clean-test snapshots (off: keeps runs fast)
  bool verbose = false;
  double intersect_eps = 0.0;
  /// When nonempty: appends per-step rows to <dir>/losses.csv, keeps
  /// <dir>/checkpoint fresh after every epoch, writes <dir>/trace.csv at the end.
  std::string artifact_dir;
};

struct EpochStats {
  LossBreakdown mean;  // per-step means of ce/expl/reg/total
  std::optional<double> clean_test_accuracy;
  double seconds = 0.0;
};

struct RefineTrace {
  std::vector<EpochStats> epochs;
  std::string checkpoint_dir;       // final checkpoint location ("" if not persisted)
  bool aborted_non_finite = false;  // loss went non-finite; model rolled back
  int skipped_instances = 0;        // empty-object-mask instances (per epoch pass)
};

/// Per-instance object centroids at grid resolution, keyed by instance id.
/// Instances whose aligned mask is empty map to nullopt (skipped downstream).
using CentroidCache = std::map<std::string, std::optional<std::pair<double, double>>>;

CentroidCache centroid_cache(const std::vector<DecoyInstance>& data, int grid_h, int grid_w);

/// Explanation-refinement loop: epochs of batched Grad-CAM (or input-gradient)
/// explanation loss combined with cross-entropy and weight decay, Adam updates
/// at the preset learning rate. On a non-finite loss the parameters roll back
/// to the last completed epoch and the trace marks the abort.
std::pair<ModelHandle, RefineTrace> refine(const ModelHandle& handle,
                                           const std::vector<DecoyInstance>& train,
                                           const RefineConfig& cfg,
                                           const std::vector<DecoyInstance>* clean_test = nullptr);

/// trace.csv: epoch,ce,expl,reg,total,seconds,clean_test_accuracy.
void write_trace_csv(const std::string& path, const RefineTrace& trace);

}  // namespace xbld
