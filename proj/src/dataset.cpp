#include "xbld/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xbld/errors.hpp"
#include "xbld/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xbld {

size_t BinaryMask::count() const {
  size_t n = 0;
  for (size_t i = 0; i < values.numel(); ++i)
    if (values[i] != 0.0) ++n;
  return n;
}

const char* corner_name(Corner c) {
  switch (c) {
    case Corner::TL: return "TL";
    case Corner::TR: return "TR";
    case Corner::BL: return "BL";
    case Corner::BR: return "BR";
    case Corner::none: break;
  }
  return "none";
}

Corner corner_from_name(const std::string& name) {
  if (name == "TL") return Corner::TL;
  if (name == "TR") return Corner::TR;
  if (name == "BL") return Corner::BL;
  if (name == "BR") return Corner::BR;
  if (name == "none") return Corner::none;
  throw ValueError("unknown corner name: " + name);
}

StampResult stamp_confounder(const LabeledImage& image, int patch_size, Rng& rng) {
  if (image.pixels.ndim() != 3) throw ShapeError("stamp_confounder: image must be [H,W,C]");
  const int h = image.h(), w = image.w(), c = image.c();
  if (patch_size < 0 || patch_size > std::min(h, w) / 4)
    throw ValueError("stamp_confounder: patch_size must satisfy 0 <= patch <= min(H,W)/4");

  StampResult out;
  out.image.pixels = image.pixels.clone();
  out.image.label = image.label;
  out.con_mask = BinaryMask::zeros(h, w);
  if (patch_size == 0) {
    out.corner = Corner::none;
    return out;
  }

  // One draw for the corner, then pixel intensities row-major, channel-minor:
  // the fixed order is what makes a seed reproduce the whole instance.
  static const Corner kCorners[4] = {Corner::TL, Corner::TR, Corner::BL, Corner::BR};
  out.corner = kCorners[rng.below(4)];
  const int row0 = (out.corner == Corner::BL || out.corner == Corner::BR) ? h - patch_size : 0;
  const int col0 = (out.corner == Corner::TR || out.corner == Corner::BR) ? w - patch_size : 0;
  for (int dy = 0; dy < patch_size; ++dy) {
    for (int dx = 0; dx < patch_size; ++dx) {
      const size_t p = (static_cast<size_t>(row0 + dy) * w + (col0 + dx));
      out.con_mask.values[p] = 1.0;
      for (int ch = 0; ch < c; ++ch) out.image.pixels[p * c + ch] = rng.uniform();
    }
  }
  return out;
}

BinaryMask derive_object_mask(const LabeledImage& image, const MaskStrategy& strategy) {
  const int h = image.h(), w = image.w(), c = image.c();
  BinaryMask mask = BinaryMask::zeros(h, w);
  switch (strategy.kind) {
    case MaskStrategy::Kind::intensity_threshold: {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double mean = 0.0;
          for (int ch = 0; ch < c; ++ch)
            mean += image.pixels[(static_cast<size_t>(y) * w + x) * c + ch];
          mean /= c;
          if (mean > strategy.tau) mask.values[static_cast<size_t>(y) * w + x] = 1.0;
        }
      }
      break;
    }
    case MaskStrategy::Kind::complement_of_corners: {
      const int p = strategy.patch_size;
      if (p < 0 || p > std::min(h, w) / 2)
        throw ValueError("complement_of_corners: patch_size too large");
      mask.values.fill(1.0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const bool in_rows = y < p || y >= h - p;
          const bool in_cols = x < p || x >= w - p;
          if (in_rows && in_cols) mask.values[static_cast<size_t>(y) * w + x] = 0.0;
        }
      }
      break;
    }
    case MaskStrategy::Kind::provided_segmentation: {
      if (!strategy.provided.defined() || strategy.provided.ndim() != 2 ||
          strategy.provided.dim(0) != h || strategy.provided.dim(1) != w)
        throw ShapeError("provided_segmentation: mask shape must match image");
      for (size_t i = 0; i < mask.values.numel(); ++i)
        mask.values[i] = strategy.provided[i] >= 0.5 ? 1.0 : 0.0;
      break;
    }
  }
  return mask;
}

std::pair<double, double> centroid(const BinaryMask& mask) {
  const int h = mask.h(), w = mask.w();
  double sr = 0.0, sc = 0.0;
  size_t n = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask.values[static_cast<size_t>(y) * w + x] != 0.0) {
        sr += y;
        sc += x;
        ++n;
      }
    }
  }
  if (n == 0) throw EmptyMaskError("centroid: mask has no set pixels");
  return {sr / static_cast<double>(n), sc / static_cast<double>(n)};
}

namespace {

std::string strategy_string(const MaskStrategy& s) {
  std::ostringstream os;
  switch (s.kind) {
    case MaskStrategy::Kind::intensity_threshold:
      os << "intensity_threshold(" << s.tau << ")";
      break;
    case MaskStrategy::Kind::complement_of_corners:
      os << "complement_of_corners(" << s.patch_size << ")";
      break;
    case MaskStrategy::Kind::provided_segmentation:
      os << "provided_segmentation";
      break;
  }
  return os.str();
}

ImageU8 mask_to_image(const BinaryMask& mask) {
  ImageU8 img;
  img.h = mask.h();
  img.w = mask.w();
  img.c = 1;
  img.pixels.resize(img.size());
  for (size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = mask.values[i] != 0.0 ? 255 : 0;
  return img;
}

BinaryMask image_to_mask(const ImageU8& img) {
  if (img.c != 1) throw IoError("mask PNG must be grayscale");
  BinaryMask mask = BinaryMask::zeros(img.h, img.w);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    mask.values[i] = img.pixels[i] >= 128 ? 1.0 : 0.0;
  return mask;
}

std::string record_id(const std::string& split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%06d", split.c_str(), index);
  return buf;
}

json record_to_json(const ManifestRecord& r) {
  return json{{"id", r.id},
              {"split", r.split},
              {"label", r.label},
              {"corner", corner_name(r.corner)},
              {"patch_size", r.patch_size},
              {"paths",
               {{"image", r.image_path},
                {"obj_mask", r.obj_mask_path},
                {"con_mask", r.con_mask_path}}}};
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.label = j.at("label").get<int>();
  r.corner = corner_from_name(j.at("corner").get<std::string>());
  r.patch_size = j.at("patch_size").get<int>();
  const auto& p = j.at("paths");
  r.image_path = p.at("image").get<std::string>();
  r.obj_mask_path = p.at("obj_mask").get<std::string>();
  r.con_mask_path = p.at("con_mask").get<std::string>();
  return r;
}

}  // namespace

std::vector<const ManifestRecord*> DecoyDatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

DecoyDatasetManifest build_decoy_dataset(const SourceDataset& source, const DecoyParams& params,
                                         const std::string& out_dir) {
  if (source.train.count <= 0) throw ValueError("build_decoy_dataset: empty train split");

  DecoyDatasetManifest manifest;
  manifest.name = source.name;
  manifest.seed = params.seed;
  manifest.patch_size = params.patch_size;
  manifest.strategy = strategy_string(params.strategy);
  manifest.root = out_dir;

  std::vector<fs::path> written;
  auto cleanup = [&]() {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
  };

  try {
    for (const char* split : {"train", "test"}) {
      for (const char* sub : {"images", "obj_masks", "con_masks"})
        fs::create_directories(fs::path(out_dir) / split / sub);
    }

    auto emit = [&](const std::string& split, int index, const LabeledImage& img,
                    const BinaryMask& obj, const BinaryMask& con, Corner corner, int patch) {
      ManifestRecord r;
      r.id = record_id(split, index);
      r.split = split;
      r.label = img.label;
      r.corner = corner;
      r.patch_size = patch;
      r.image_path = split + "/images/" + r.id + ".png";
      r.obj_mask_path = split + "/obj_masks/" + r.id + ".png";
      r.con_mask_path = split + "/con_masks/" + r.id + ".png";
      const fs::path root(out_dir);
      written.push_back(root / r.image_path);
      write_png(written.back().string(), tensor_to_image(img.pixels));
      written.push_back(root / r.obj_mask_path);
      write_png(written.back().string(), mask_to_image(obj));
      written.push_back(root / r.con_mask_path);
      write_png(written.back().string(), mask_to_image(con));
      manifest.records.push_back(std::move(r));
    };

    for (int i = 0; i < source.train.count; ++i) {
      LabeledImage img = source.train.get(i);
      // Per-instance substream: regeneration of instance i never depends on
      // how many instances came before it.
      Rng rng(Rng::derive(params.seed, static_cast<uint64_t>(i)));
      StampResult stamped = stamp_confounder(img, params.patch_size, rng);
      MaskStrategy strategy = params.strategy;
      if (strategy.kind == MaskStrategy::Kind::provided_segmentation) {
        if (!source.train.get_segmentation)
          throw ValueError("provided_segmentation requires source segmentation masks");
        strategy.provided = source.train.get_segmentation(i);
      }
      // Object masks are derived from the original, pre-decoy pixels so the
      // confounder cannot leak into A_obj.
      BinaryMask obj = derive_object_mask(img, strategy);
      emit("train", i, stamped.image, obj, stamped.con_mask, stamped.corner, params.patch_size);
    }

    for (int i = 0; i < source.test.count; ++i) {
      LabeledImage img = source.test.get(i);
      MaskStrategy strategy = params.strategy;
      if (strategy.kind == MaskStrategy::Kind::provided_segmentation) {
        if (!source.test.get_segmentation)
          throw ValueError("provided_segmentation requires source segmentation masks");
        strategy.provided = source.test.get_segmentation(i);
      }
      BinaryMask obj = derive_object_mask(img, strategy);
      BinaryMask con = BinaryMask::zeros(img.h(), img.w());
      emit("test", i, img, obj, con, Corner::none, 0);
    }

    const fs::path manifest_path = fs::path(out_dir) / "manifest.jsonl";
    written.push_back(manifest_path);
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    json header{{"name", manifest.name},
                {"seed", manifest.seed},
                {"patch_size", manifest.patch_size},
                {"strategy", manifest.strategy}};
    out << header.dump() << "\n";
    for (const auto& r : manifest.records) out << record_to_json(r).dump() << "\n";
    out.close();
    if (!out) throw IoError("failed writing " + manifest_path.string());
  } catch (...) {
    cleanup();
    throw;
  }
  return manifest;
}

DecoyDatasetManifest load_manifest(const std::string& dataset_dir) {
  const fs::path manifest_path = fs::path(dataset_dir) / "manifest.jsonl";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  DecoyDatasetManifest manifest;
  manifest.root = dataset_dir;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed manifest line in " + manifest_path.string());
    if (j.contains("id")) {
      manifest.records.push_back(record_from_json(j));
    } else if (!have_header) {
      manifest.name = j.value("name", "");
      manifest.seed = j.value("seed", uint64_t{0});
      manifest.patch_size = j.value("patch_size", 0);
      manifest.strategy = j.value("strategy", "");
      have_header = true;
    }
  }
  if (manifest.records.empty()) throw IoError("manifest has no instance records: " + manifest_path.string());
  return manifest;
}

DecoyInstance load_instance(const DecoyDatasetManifest& manifest, const ManifestRecord& record) {
  const fs::path root(manifest.root);
  DecoyInstance inst;
  inst.id = record.id;
  inst.image.pixels = image_to_tensor(read_png((root / record.image_path).string()));
  inst.image.label = record.label;
  inst.obj_mask = image_to_mask(read_png((root / record.obj_mask_path).string()));
  inst.con_mask = image_to_mask(read_png((root / record.con_mask_path).string()));
  inst.corner = record.corner;
  inst.patch_size = record.patch_size;
  if (inst.obj_mask.h() != inst.image.h() || inst.obj_mask.w() != inst.image.w() ||
      inst.con_mask.h() != inst.image.h() || inst.con_mask.w() != inst.image.w())
    throw ShapeError("load_instance: mask/image shape mismatch for " + record.id);
  return inst;
}

std::vector<DecoyInstance> load_split(const DecoyDatasetManifest& manifest,
                                      const std::string& split) {
  std::vector<DecoyInstance> out;
  for (const auto& r : manifest.records)
    if (r.split == split) out.push_back(load_instance(manifest, r));
  return out;
}

}  // namespace xbld
