#include "xbld/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "xbld/errors.hpp"
#include "xbld/kernels.hpp"
#include "xbld/ops.hpp"
#include "xbld/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xbld {

int ArchitectureSpec::feature_h() const {
  int h = input_h;
  for (const auto& b : conv_blocks)
    if (b.followed_by_maxpool) h /= 2;
  return h;
}

int ArchitectureSpec::feature_w() const {
  int w = input_w;
  for (const auto& b : conv_blocks)
    if (b.followed_by_maxpool) w /= 2;
  return w;
}

ArchitectureSpec preset(const std::string& name) {
  ArchitectureSpec s;
  if (name == "fmnist") {
    s.conv_blocks = {{160, false}};
    s.fc_sizes = {992, 800};
    s.num_classes = 10;
    s.input_h = 28;
    s.input_w = 28;
    s.input_c = 1;
    s.learning_rate = 1.158e-4;
  } else if (name == "cifar10") {
    s.conv_blocks = {{250, false}, {300, false}};
    s.fc_sizes = {912};
    s.num_classes = 10;
    s.input_h = 32;
    s.input_w = 32;
    s.input_c = 3;
    s.learning_rate = 1.267e-4;
  } else if (name == "coco2") {
    s.conv_blocks = {{160, true}, {352, true}, {416, true}, {224, true}};
    s.fc_sizes = {480};
    s.num_classes = 2;
    s.input_h = 224;
    s.input_w = 224;
    s.input_c = 3;
    s.learning_rate = 1.789e-5;
  } else if (name == "fmnist_desk") {
    // Compact variant for laptop-class runs on data subsets; same input
    // contract as fmnist with far fewer parameters.
    s.conv_blocks = {{16, false}};
    s.fc_sizes = {64};
    s.num_classes = 10;
    s.input_h = 28;
    s.input_w = 28;
    s.input_c = 1;
    s.learning_rate = 4e-4;
  } else {
    throw ValueError("unknown architecture preset: " + name);
  }
  return s;
}

size_t Model::num_parameters() const {
  size_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

Model init_model(const ArchitectureSpec& spec, uint64_t seed) {
  if (spec.conv_blocks.empty()) throw ValueError("architecture needs at least one conv block");
  if (spec.learning_rate <= 0) throw ValueError("learning_rate must be positive");

  Model m;
  m.spec = spec;
  Rng rng(Rng::derive(seed, 0x1d17));

  auto he = [&](std::vector<int> shape, int fan_in) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / fan_in);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
    return t;
  };

  int cin = spec.input_c;
  for (size_t i = 0; i < spec.conv_blocks.size(); ++i) {
    const int f = spec.conv_blocks[i].filters;
    const int fan_in = 3 * 3 * cin;
    m.params.push_back(he({fan_in, f}, fan_in));
    m.param_names.push_back("conv" + std::to_string(i) + ".w");
    m.params.push_back(Tensor::zeros({f}));
    m.param_names.push_back("conv" + std::to_string(i) + ".b");
    cin = f;
  }
  int in = spec.feature_h() * spec.feature_w() * cin;
  for (size_t i = 0; i < spec.fc_sizes.size(); ++i) {
    const int out = spec.fc_sizes[i];
    m.params.push_back(he({in, out}, in));
    m.param_names.push_back("fc" + std::to_string(i) + ".w");
    m.params.push_back(Tensor::zeros({out}));
    m.param_names.push_back("fc" + std::to_string(i) + ".b");
    in = out;
  }
  m.params.push_back(he({in, spec.num_classes}, in));
  m.param_names.push_back("head.w");
  m.params.push_back(Tensor::zeros({spec.num_classes}));
  m.param_names.push_back("head.b");
  return m;
}

ForwardResult forward_with_features(const Model& model, const Tensor& batch, bool train,
                                    bool input_grad) {
  const auto& spec = model.spec;
  if (batch.ndim() != 4 || batch.dim(1) != spec.input_h || batch.dim(2) != spec.input_w ||
      batch.dim(3) != spec.input_c)
    throw ShapeError("forward: batch shape does not match spec input shape");
  const int b = batch.dim(0);

  ForwardResult r;
  r.input = ad::leaf(batch, input_grad);
  r.param_vars.reserve(model.params.size());
  for (const auto& p : model.params) r.param_vars.push_back(ad::leaf(p, train));

  size_t pi = 0;
  ad::Var x = r.input;
  int h = spec.input_h, w = spec.input_w;
  for (const auto& block : spec.conv_blocks) {
    ad::Var col = ad::im2col(x, 3, 3, 1);                      // [b*h*w, 9*cin]
    ad::Var y = ad::bias_add(ad::matmul(col, r.param_vars[pi]), r.param_vars[pi + 1]);
    pi += 2;
    x = ad::relu(ad::reshape(y, {b, h, w, block.filters}));
    if (block.followed_by_maxpool) {
      x = ad::maxpool2(x);
      h /= 2;
      w /= 2;
    }
  }
  r.features = x;

  const int flat = h * w * spec.conv_blocks.back().filters;
  ad::Var z = ad::reshape(x, {b, flat});
  for (size_t i = 0; i < spec.fc_sizes.size(); ++i) {
    z = ad::relu(ad::bias_add(ad::matmul(z, r.param_vars[pi]), r.param_vars[pi + 1]));
    pi += 2;
  }
  r.logits = ad::bias_add(ad::matmul(z, r.param_vars[pi]), r.param_vars[pi + 1]);
  return r;
}

ad::Var cross_entropy(const ad::Var& logits, const std::vector<int>& labels) {
  const int b = logits->value.dim(0);
  if (static_cast<int>(labels.size()) != b) throw ShapeError("cross_entropy: label count mismatch");
  ad::Var lse = ad::logsumexp_rows(logits);              // [B]
  ad::Var gold = ad::gather_label(logits, labels);       // [B]
  return ad::scale(ad::sum_all(ad::sub(lse, gold)), 1.0 / b);
}

Tensor softmax_rows(const Tensor& logits) {
  const int b = logits.dim(0), k = logits.dim(1);
  Tensor out({b, k});
  for (int i = 0; i < b; ++i) {
    const double* row = logits.data() + static_cast<size_t>(i) * k;
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    double acc = 0;
    for (int j = 0; j < k; ++j) acc += std::exp(row[j] - m);
    for (int j = 0; j < k; ++j) out[static_cast<size_t>(i) * k + j] = std::exp(row[j] - m) / acc;
  }
  return out;
}

std::vector<int> predict_labels(const Tensor& logits) {
  const int b = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    const double* row = logits.data() + static_cast<size_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

Tensor make_batch(const std::vector<DecoyInstance>& instances, const std::vector<int>& indices) {
  if (indices.empty()) throw ValueError("make_batch: empty index list");
  const auto& first = instances[static_cast<size_t>(indices[0])].image.pixels;
  const int h = first.dim(0), w = first.dim(1), c = first.dim(2);
  Tensor batch({static_cast<int>(indices.size()), h, w, c});
  const size_t stride = static_cast<size_t>(h) * w * c;
  for (size_t i = 0; i < indices.size(); ++i) {
    const auto& px = instances[static_cast<size_t>(indices[i])].image.pixels;
    if (px.dim(0) != h || px.dim(1) != w || px.dim(2) != c)
      throw ShapeError("make_batch: inconsistent instance shapes");
    std::memcpy(batch.data() + i * stride, px.data(), stride * sizeof(double));
  }
  return batch;
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ValueError("Adam: param/grad count mismatch");
  if (m.empty()) {
    for (const auto& p : params) {
      m.push_back(Tensor::zeros(p.shape()));
      v.push_back(Tensor::zeros(p.shape()));
    }
  }
  ++t;
  const double bias1 = 1.0 - std::pow(beta1, t);
  const double bias2 = 1.0 - std::pow(beta2, t);
  const auto& k = kern::active();
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) throw ShapeError("Adam: grad shape mismatch");
    k.adam_step(params[i].data(), grads[i].data(), m[i].data(), v[i].data(), params[i].numel(),
                lr, beta1, beta2, eps, bias1, bias2);
  }
}

namespace {

double holdout_accuracy(const Model& model, const std::vector<DecoyInstance>& data,
                        const std::vector<int>& idx, int batch_size) {
  if (idx.empty()) return 0.0;
  size_t correct = 0;
  for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<int> chunk(idx.begin() + static_cast<long>(start),
                           idx.begin() + static_cast<long>(std::min(idx.size(), start + batch_size)));
    Tensor batch = make_batch(data, chunk);
    ForwardResult fr = forward_with_features(model, batch, /*train=*/false);
    const auto pred = predict_labels(fr.logits->value);
    for (size_t i = 0; i < chunk.size(); ++i)
      if (pred[i] == data[static_cast<size_t>(chunk[i])].image.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

ModelHandle fit_unrefined(const ArchitectureSpec& spec, const std::vector<DecoyInstance>& train,
                          const std::string& dataset_name, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValueError("fit_unrefined: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValueError("fit_unrefined: batch_size must be >= 1");
  if (train.empty()) throw ValueError("fit_unrefined: empty training split");

  Model model = init_model(spec, cfg.seed);

  // Deterministic holdout: last fraction of a seeded shuffle.
  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng split_rng(Rng::derive(cfg.seed, 0x501f));
  split_rng.shuffle(order);
  const size_t holdout_n =
      std::min(train.size() - 1, static_cast<size_t>(cfg.holdout_fraction * train.size()));
  std::vector<int> holdout(order.end() - static_cast<long>(holdout_n), order.end());
  std::vector<int> fit_idx(order.begin(), order.end() - static_cast<long>(holdout_n));

  Adam opt(spec.learning_rate);
  double best_acc = -1.0;
  std::vector<Tensor> best_params;
  int best_epoch = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng(Rng::derive(cfg.seed, 0xe90c + static_cast<uint64_t>(epoch)));
    epoch_rng.shuffle(fit_idx);
    double epoch_loss = 0.0;
    size_t steps = 0;
    for (size_t start = 0; start < fit_idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
      std::vector<int> chunk(
          fit_idx.begin() + static_cast<long>(start),
          fit_idx.begin() + static_cast<long>(std::min(fit_idx.size(),
                                                       start + cfg.batch_size)));
      Tensor batch = make_batch(train, chunk);
      std::vector<int> labels(chunk.size());
      for (size_t i = 0; i < chunk.size(); ++i)
        labels[i] = train[static_cast<size_t>(chunk[i])].image.label;

      ForwardResult fr = forward_with_features(model, batch, /*train=*/true);
      ad::Var loss = cross_entropy(fr.logits, labels);
      const double loss_val = loss->value[0];
      if (!std::isfinite(loss_val))
        throw NumericError("fit_unrefined: loss became non-finite at epoch " +
                           std::to_string(epoch));
      auto grads = ad::grad(loss, fr.param_vars);
      std::vector<Tensor> grad_tensors;
      grad_tensors.reserve(grads.size());
      for (auto& g : grads) grad_tensors.push_back(g->value);
      opt.step(model.params, grad_tensors);
      epoch_loss += loss_val;
      ++steps;
    }
    const double acc = holdout_accuracy(model, train, holdout, cfg.batch_size);
    if (cfg.verbose)
      std::fprintf(stderr, "[fit] epoch %d mean_ce=%.4f holdout_acc=%.4f\n", epoch,
                   epoch_loss / std::max<size_t>(steps, 1), acc);
    if (holdout.empty() || acc > best_acc) {
      best_acc = acc;
      best_epoch = epoch;
      best_params.clear();
      for (const auto& p : model.params) best_params.push_back(p.clone());
    }
    if (cfg.stop_loss && steps > 0 && epoch_loss / static_cast<double>(steps) <= *cfg.stop_loss)
      break;
  }
  if (!best_params.empty()) model.params = std::move(best_params);

  ModelHandle handle;
  handle.model = std::move(model);
  handle.provenance = {dataset_name, cfg.seed, best_epoch + 1, "unrefined"};
  return handle;
}

namespace {

constexpr char kCkptMagic[8] = {'X', 'B', 'L', 'D', 'C', 'K', 'P', 'T'};

json spec_to_json(const ArchitectureSpec& s) {
  json conv = json::array();
  for (const auto& b : s.conv_blocks) conv.push_back({{"filters", b.filters}, {"maxpool", b.followed_by_maxpool}});
  return json{{"conv_blocks", conv},
              {"fc_sizes", s.fc_sizes},
              {"num_classes", s.num_classes},
              {"input_shape", {s.input_h, s.input_w, s.input_c}},
              {"learning_rate", s.learning_rate}};
}

ArchitectureSpec spec_from_json(const json& j) {
  ArchitectureSpec s;
  for (const auto& b : j.at("conv_blocks"))
    s.conv_blocks.push_back({b.at("filters").get<int>(), b.at("maxpool").get<bool>()});
  s.fc_sizes = j.at("fc_sizes").get<std::vector<int>>();
  s.num_classes = j.at("num_classes").get<int>();
  const auto shape = j.at("input_shape").get<std::vector<int>>();
  s.input_h = shape.at(0);
  s.input_w = shape.at(1);
  s.input_c = shape.at(2);
  s.learning_rate = j.at("learning_rate").get<double>();
  return s;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ModelHandle& handle) {
  fs::create_directories(dir);
  const fs::path bin = fs::path(dir) / "checkpoint.bin";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError("cannot write " + bin.string());
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const uint32_t count = static_cast<uint32_t>(handle.model.params.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& p : handle.model.params) {
    const uint32_t nd = static_cast<uint32_t>(p.ndim());
    out.write(reinterpret_cast<const char*>(&nd), sizeof(nd));
    for (int d = 0; d < p.ndim(); ++d) {
      const int32_t dim = p.dim(d);
      out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    out.write(reinterpret_cast<const char*>(p.data()),
              static_cast<std::streamsize>(p.numel() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + bin.string());
  out.close();

  json meta{{"spec", spec_to_json(handle.model.spec)},
            {"param_names", handle.model.param_names},
            {"provenance",
             {{"dataset", handle.provenance.dataset},
              {"seed", handle.provenance.seed},
              {"epochs", handle.provenance.epochs},
              {"method", handle.provenance.method}}}};
  const fs::path meta_path = fs::path(dir) / "meta.json";
  std::ofstream mout(meta_path);
  if (!mout) throw IoError("cannot write " + meta_path.string());
  mout << meta.dump(2) << "\n";
  if (!mout) throw IoError("failed writing " + meta_path.string());
}

ModelHandle load_checkpoint(const std::string& dir) {
  const fs::path meta_path = fs::path(dir) / "meta.json";
  std::ifstream min(meta_path);
  if (!min) throw IoError("cannot open " + meta_path.string());
  json meta = json::parse(min, nullptr, false);
  if (meta.is_discarded()) throw IoError("malformed " + meta_path.string());

  ModelHandle handle;
  handle.model.spec = spec_from_json(meta.at("spec"));
  handle.model.param_names = meta.at("param_names").get<std::vector<std::string>>();
  const auto& prov = meta.at("provenance");
  handle.provenance.dataset = prov.at("dataset").get<std::string>();
  handle.provenance.seed = prov.at("seed").get<uint64_t>();
  handle.provenance.epochs = prov.at("epochs").get<int>();
  handle.provenance.method = prov.at("method").get<std::string>();

  const fs::path bin = fs::path(dir) / "checkpoint.bin";
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot open " + bin.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw IoError("bad checkpoint magic in " + bin.string());
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nd = 0;
    in.read(reinterpret_cast<char*>(&nd), sizeof(nd));
    std::vector<int> shape(nd);
    for (uint32_t d = 0; d < nd; ++d) {
      int32_t dim = 0;
      in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
      shape[d] = dim;
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint " + bin.string());
    handle.model.params.push_back(std::move(t));
  }
  return handle;
}

Tensor infer_logits(const Model& model, const std::vector<DecoyInstance>& instances,
                    int batch_size) {
  if (instances.empty()) throw ValueError("infer_logits: empty instance list");
  Tensor out({static_cast<int>(instances.size()), model.spec.num_classes});
  const int k = model.spec.num_classes;
  for (size_t start = 0; start < instances.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<int> chunk;
    for (size_t i = start; i < std::min(instances.size(), start + batch_size); ++i)
      chunk.push_back(static_cast<int>(i));
    Tensor batch = make_batch(instances, chunk);
    ForwardResult fr = forward_with_features(model, batch, /*train=*/false);
    std::memcpy(out.data() + start * k, fr.logits->value.data(),
                chunk.size() * k * sizeof(double));
  }
  return out;
}

}  // namespace xbld
