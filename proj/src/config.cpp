#include "xbld/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "xbld/errors.hpp"

namespace xbld {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string ConfigMap::get(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

int ConfigMap::get_int(const std::string& key, int fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    size_t pos = 0;
    int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ValueError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ValueError("config: key '" + key + "' is not a number: " + it->second);
  }
}

uint64_t ConfigMap::get_u64(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw ValueError("config: required key '" + key + "' is missing");
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ValueError("config: key '" + key + "' is not an unsigned integer: " + it->second);
  }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ValueError("config: key '" + key + "' is not a boolean: " + v);
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValueError("config: empty key at line " + std::to_string(lineno));
    cfg.values[key] = value;
  }
  return cfg;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(ConfigMap& cfg, const std::string& key_eq_value) {
  const size_t eq = key_eq_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValueError("override must be key=value: " + key_eq_value);
  cfg.values[trim(key_eq_value.substr(0, eq))] = trim(key_eq_value.substr(eq + 1));
}

std::string canonical_config(const ConfigMap& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.values) {  // std::map iterates sorted
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string config_hash(const ConfigMap& cfg) {
  const std::string canon = canonical_config(cfg);
  uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentConfig::run_id() const { return config_hash(raw); }

ExperimentConfig ExperimentConfig::from_map(const ConfigMap& cfg) {
  static const std::set<std::string> known = {
      "dataset",      "preset",       "seed",          "patch_size",     "mask_strategy",
      "tau",          "train_limit",  "test_limit",    "train_epochs",   "batch_size",
      "methods",      "refine_epochs", "lambda1",      "lambda2",        "lambda",
      "stop_loss",    "reference_threshold",           "eval_limit",     "gallery_count",
      "output_root",
  };
  for (const auto& [k, _] : cfg.values)
    if (!known.count(k)) throw ValueError("config: unknown key '" + k + "'");

  ExperimentConfig ec;
  ec.raw = cfg;
  ec.dataset = cfg.get("dataset");
  if (ec.dataset.empty()) throw ValueError("config: 'dataset' is required");
  ec.seed = cfg.get_u64("seed");  // mandatory: fail fast before any work

  const bool builtin = ec.dataset == "fmnist" || ec.dataset == "cifar10";
  ec.preset = cfg.get("preset", builtin ? ec.dataset : "coco2");

  ec.patch_size = cfg.get_int("patch_size", ec.preset == "coco2" ? 16 : 4);
  std::string default_strategy = "provided_segmentation";
  if (ec.dataset == "fmnist") default_strategy = "intensity_threshold";
  if (ec.dataset == "cifar10") default_strategy = "complement_of_corners";
  ec.mask_strategy = cfg.get("mask_strategy", default_strategy);
  if (ec.mask_strategy != "intensity_threshold" && ec.mask_strategy != "complement_of_corners" &&
      ec.mask_strategy != "provided_segmentation")
    throw ValueError("config: unknown mask_strategy '" + ec.mask_strategy + "'");
  ec.tau = cfg.get_double("tau", 0.1);
  ec.train_limit = cfg.get_int("train_limit", 0);
  ec.test_limit = cfg.get_int("test_limit", 0);
  if (ec.train_limit < 0 || ec.test_limit < 0)
    throw ValueError("config: split limits must be >= 0");

  ec.train_epochs = cfg.get_int("train_epochs", 20);
  ec.batch_size = cfg.get_int("batch_size", 32);
  if (ec.train_epochs < 1) throw ValueError("config: train_epochs must be >= 1");
  if (ec.batch_size < 1) throw ValueError("config: batch_size must be >= 1");

  std::string methods = cfg.get("methods", "xbl_d");
  std::stringstream ms(methods);
  std::string m;
  while (std::getline(ms, m, ',')) {
    m = trim(m);
    if (m.empty()) continue;
    if (m != "xbl_d" && m != "rrr" && m != "rrr_g")
      throw ValueError("config: unknown refinement method '" + m + "'");
    ec.methods.push_back(m);
  }
  if (ec.methods.empty()) throw ValueError("config: 'methods' resolved to an empty list");

  ec.refine_epochs = cfg.get_int("refine_epochs", ec.preset == "coco2" ? 20 : 50);
  if (ec.refine_epochs < 1) throw ValueError("config: refine_epochs must be >= 1");
  ec.lambda1 = cfg.get_double("lambda1", 2.7);
  ec.lambda2 = cfg.get_double("lambda2", 0.1);
  ec.lambda = cfg.get_double("lambda", 1e-5);
  if (ec.lambda1 < 0 || ec.lambda2 < 0 || ec.lambda < 0)
    throw ValueError("config: loss coefficients must be >= 0");
  if (cfg.has("stop_loss")) ec.stop_loss = cfg.get_double("stop_loss", 0.0);

  ec.reference_threshold = cfg.get_double("reference_threshold", 40.0);
  if (ec.reference_threshold < 0 || ec.reference_threshold >= 100)
    throw ValueError("config: reference_threshold must be in [0,100)");
  ec.eval_limit = cfg.get_int("eval_limit", 0);
  ec.gallery_count = cfg.get_int("gallery_count", 0);
  if (ec.eval_limit < 0 || ec.gallery_count < 0)
    throw ValueError("config: limits must be >= 0");
  ec.output_root = cfg.get("output_root", "runs");
  return ec;
}

}  // namespace xbld
