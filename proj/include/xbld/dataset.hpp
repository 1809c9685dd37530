#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xbld/rng.hpp"
#include "xbld/tensor.hpp"

namespace xbld {

/// One image with its category; pixels are [H,W,C] doubles in [0,1].
struct LabeledImage {
  Tensor pixels;
  int label = 0;

  int h() const { return pixels.dim(0); }
  int w() const { return pixels.dim(1); }
  int c() const { return pixels.dim(2); }
};

/// [H,W] tensor whose entries are exactly 0 or 1.
struct BinaryMask {
  Tensor values;

  int h() const { return values.dim(0); }
  int w() const { return values.dim(1); }
  size_t count() const;
  bool empty() const { return count() == 0; }

  static BinaryMask zeros(int h, int w) { return {Tensor::zeros({h, w})}; }
};

enum class Corner { none, TL, TR, BL, BR };

const char* corner_name(Corner c);
Corner corner_from_name(const std::string& name);

/// A training/test instance with its ground-truth region annotations.
struct DecoyInstance {
  std::string id;
  LabeledImage image;
  BinaryMask obj_mask;
  BinaryMask con_mask;
  Corner corner = Corner::none;
  int patch_size = 0;
};

struct StampResult {
  LabeledImage image;
  BinaryMask con_mask;
  Corner corner = Corner::none;
};

/// Replaces one uniformly chosen corner-aligned patch_size^2 square with
/// i.i.d. uniform [0,1] pixel values (independently per channel).
/// patch_size = 0 is the identity. Requires patch_size <= min(H,W)/4.
StampResult stamp_confounder(const LabeledImage& image, int patch_size, Rng& rng);

/// How object-of-interest masks are derived for datasets without
/// segmentation ground truth.
struct MaskStrategy {
  enum class Kind { intensity_threshold, provided_segmentation, complement_of_corners };
  Kind kind = Kind::intensity_threshold;
  double tau = 0.1;          // intensity_threshold
  int patch_size = 4;        // complement_of_corners
  Tensor provided;           // provided_segmentation: [H,W], binarized at 0.5

  static MaskStrategy intensity_threshold(double tau) {
    MaskStrategy s;
    s.kind = Kind::intensity_threshold;
    s.tau = tau;
    return s;
  }
  static MaskStrategy complement_of_corners(int patch_size) {
    MaskStrategy s;
    s.kind = Kind::complement_of_corners;
    s.patch_size = patch_size;
    return s;
  }
  static MaskStrategy provided_segmentation(Tensor mask) {
    MaskStrategy s;
    s.kind = Kind::provided_segmentation;
    s.provided = std::move(mask);
    return s;
  }
};

BinaryMask derive_object_mask(const LabeledImage& image, const MaskStrategy& strategy);

/// Arithmetic mean (row, col) of the nonzero pixels. Throws EmptyMaskError
/// on an all-zero mask.
std::pair<double, double> centroid(const BinaryMask& mask);

/// Lazy view over a split: get(i) materializes instance i.
struct SplitView {
  int count = 0;
  std::function<LabeledImage(int)> get;
  // Optional per-instance segmentation (e.g. COCO-style object masks);
  // used when the strategy is provided_segmentation.
  std::function<Tensor(int)> get_segmentation;
};

struct SourceDataset {
  std::string name;
  int num_classes = 0;
  SplitView train;
  SplitView test;
};

struct DecoyParams {
  int patch_size = 4;
  MaskStrategy strategy;
  uint64_t seed = 0;
};

struct ManifestRecord {
  std::string id;
  std::string split;  // "train" | "test"
  int label = 0;
  Corner corner = Corner::none;
  int patch_size = 0;
  std::string image_path;     // relative to dataset root
  std::string obj_mask_path;
  std::string con_mask_path;
};

struct DecoyDatasetManifest {
  std::string name;
  uint64_t seed = 0;
  int patch_size = 0;
  std::string strategy;  // canonical strategy string, e.g. "intensity_threshold(0.1)"
  std::string root;      // directory containing manifest.jsonl
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(const std::string& name) const;
};

/// Decoys every train instance, copies test instances clean, derives object
/// masks, writes images/masks as PNG plus manifest.jsonl. Returns the
/// manifest. On failure, removes any partially written files.
DecoyDatasetManifest build_decoy_dataset(const SourceDataset& source, const DecoyParams& params,
                                         const std::string& out_dir);

DecoyDatasetManifest load_manifest(const std::string& dataset_dir);

/// Reads one instance's image and masks from disk.
DecoyInstance load_instance(const DecoyDatasetManifest& manifest, const ManifestRecord& record);

/// Materializes a whole split (train/test) in manifest order.
std::vector<DecoyInstance> load_split(const DecoyDatasetManifest& manifest,
                                      const std::string& split);

}  // namespace xbld
