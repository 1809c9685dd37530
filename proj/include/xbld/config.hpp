#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xbld {

/// Flat key-value configuration: one `key = value` per line, `#` comments.
/// CLI overrides (`key=value`) replace file values.
struct ConfigMap {
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback = "") const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  uint64_t get_u64(const std::string& key) const;  // throws when missing/invalid
  bool get_bool(const std::string& key, bool fallback) const;
};

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::string& path);

/// Applies a single `key=value` override (later overrides win).
void apply_override(ConfigMap& cfg, const std::string& key_eq_value);

/// Sorted `key=value` lines — the input to run-identity hashing.
std::string canonical_config(const ConfigMap& cfg);

/// 16-hex-digit FNV-1a hash of the canonical form; names runs/<hash>/.
std::string config_hash(const ConfigMap& cfg);

/// Fully resolved experiment parameters. Construction validates: seed is
/// mandatory, names/keys must be known, numeric ranges checked.
struct ExperimentConfig {
  std::string dataset;   // fmnist | cifar10 | local PNG directory
  std::string preset;    // architecture preset name
  uint64_t seed = 0;

  // decoy stage
  int patch_size = 4;
  std::string mask_strategy;  // intensity_threshold | complement_of_corners | provided_segmentation
  double tau = 0.1;
  int train_limit = 0;  // 0 = whole split
  int test_limit = 0;

  // unrefined training
  int train_epochs = 20;
  int batch_size = 32;

  // refinement
  std::vector<std::string> methods;  // subset of {xbl_d, rrr, rrr_g}
  int refine_epochs = 50;
  double lambda1 = 2.7;
  double lambda2 = 0.1;
  double lambda = 1e-5;
  std::optional<double> stop_loss;

  // evaluation / report
  double reference_threshold = 40.0;
  int eval_limit = 0;    // 0 = full clean test split
  int gallery_count = 0; // 0 = no gallery
  std::string output_root = "runs";

  /// The raw map this config was resolved from (for hashing/persistence).
  ConfigMap raw;

  std::string run_id() const;  // config_hash(raw)

  static ExperimentConfig from_map(const ConfigMap& cfg);
};

}  // namespace xbld
