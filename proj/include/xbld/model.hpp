#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xbld/autodiff.hpp"
#include "xbld/dataset.hpp"
#include "xbld/tensor.hpp"

namespace xbld {

struct ConvBlock {
  int filters = 0;
  bool followed_by_maxpool = false;
};

struct ArchitectureSpec {
  std::vector<ConvBlock> conv_blocks;
  std::vector<int> fc_sizes;
  int num_classes = 0;
  int input_h = 0, input_w = 0, input_c = 0;
  double learning_rate = 0.0;

  /// Spatial side of the last conv feature maps (inputs are square here).
  int feature_h() const;
  int feature_w() const;
};

/// Named presets: fmnist, cifar10, coco2, fmnist_desk. Unknown names throw
/// ValueError.
ArchitectureSpec preset(const std::string& name);

/// Parameters in graph order: per conv block W [3*3*Cin, F] then b [F];
/// per hidden FC W [in, out] then b; head W then b.
struct Model {
  ArchitectureSpec spec;
  std::vector<Tensor> params;
  std::vector<std::string> param_names;

  size_t num_parameters() const;
};

/// He-normal initialization from the given seed.
Model init_model(const ArchitectureSpec& spec, uint64_t seed);

struct ForwardResult {
  ad::Var logits;    // [B,K]
  ad::Var features;  // last conv stack output (post-ReLU/pool), [B,Hs,Ws,F]
  ad::Var input;     // the batch leaf (differentiable iff input_grad)
  std::vector<ad::Var> param_vars;  // aligned with Model::params
};

/// Builds the define-by-run graph for one batch [B,H,W,C]. When train is
/// false the graph carries no gradient state.
ForwardResult forward_with_features(const Model& model, const Tensor& batch, bool train,
                                    bool input_grad = false);

/// Mean cross-entropy of logits [B,K] against labels, via stable logsumexp.
ad::Var cross_entropy(const ad::Var& logits, const std::vector<int>& labels);

/// Row-wise softmax of a plain logits tensor.
Tensor softmax_rows(const Tensor& logits);

/// argmax per row.
std::vector<int> predict_labels(const Tensor& logits);

/// Stacks instances' pixels into one [B,H,W,C] tensor.
Tensor make_batch(const std::vector<DecoyInstance>& instances, const std::vector<int>& indices);

struct Adam {
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int t = 0;
  std::vector<Tensor> m, v;

  explicit Adam(double lr_) : lr(lr_) {}
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);
};

struct Provenance {
  std::string dataset;
  uint64_t seed = 0;
  int epochs = 0;
  std::string method = "unrefined";
};

struct ModelHandle {
  Model model;
  Provenance provenance;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  uint64_t seed = 0;
  std::optional<double> stop_loss;     // sigma: stop when epoch-mean loss <= sigma
  double holdout_fraction = 0.1;       // best-checkpoint selection split
  bool verbose = false;
};

/// Cross-entropy-only training on the decoyed train split (Unrefined model).
/// Keeps the parameters of the epoch with the best holdout accuracy.
ModelHandle fit_unrefined(const ArchitectureSpec& spec, const std::vector<DecoyInstance>& train,
                          const std::string& dataset_name, const TrainConfig& cfg);

/// checkpoint.bin (parameters) + meta.json (spec + provenance) in dir.
void save_checkpoint(const std::string& dir, const ModelHandle& handle);
ModelHandle load_checkpoint(const std::string& dir);

/// Plain inference logits for a batch of instances (no graph retained).
Tensor infer_logits(const Model& model, const std::vector<DecoyInstance>& instances,
                    int batch_size = 64);

}  // namespace xbld
