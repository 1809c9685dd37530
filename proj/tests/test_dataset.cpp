#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "xbld/dataset.hpp"
#include "xbld/errors.hpp"
#include "xbld/rng.hpp"

using namespace xbld;
using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

LabeledImage solid(int h, int w, int c, double v, int label) {
  LabeledImage img;
  img.pixels = Tensor({h, w, c});
  for (size_t i = 0; i < img.pixels.numel(); ++i) img.pixels[i] = v;
  img.label = label;
  return img;
}

/// Synthetic source: 12x12 gray images, bright 4x4 block whose position
/// cycles with the index, label = index % 3.
SourceDataset toy_source(int n_train, int n_test) {
  auto make = [](int i) {
    LabeledImage img = solid(12, 12, 1, 0.0, i % 3);
    const int r0 = 3 + (i % 2) * 2, c0 = 3 + ((i / 2) % 2) * 2;
    for (int r = r0; r < r0 + 4; ++r)
      for (int c = c0; c < c0 + 4; ++c)
        img.pixels[static_cast<size_t>(r) * 12 + c] = 0.9;
    return img;
  };
  SourceDataset src;
  src.name = "toy";
  src.num_classes = 3;
  src.train.count = n_train;
  src.train.get = make;
  src.test.count = n_test;
  src.test.get = [make, n_train](int i) { return make(n_train + i); };
  return src;
}

/// Relative path -> file bytes for every regular file under root.
std::map<std::string, std::string> file_tree(const std::string& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    out[fs::relative(e.path(), root).string()] = std::move(bytes);
  }
  return out;
}

}  // namespace

TEST_CASE("stamp_confounder patch 0 is the identity") {
  LabeledImage img = solid(8, 8, 1, 0.25, 2);
  Rng rng(9);
  StampResult r = stamp_confounder(img, 0, rng);
  CHECK(r.corner == Corner::none);
  CHECK(r.con_mask.count() == 0);
  for (size_t i = 0; i < img.pixels.numel(); ++i) CHECK(r.image.pixels[i] == img.pixels[i]);
}

TEST_CASE("stamp_confounder rejects oversize patches") {
  LabeledImage img = solid(12, 12, 1, 0.0, 0);
  Rng rng(1);
  CHECK_THROWS_AS(stamp_confounder(img, 4, rng), ValueError);  // 4 > 12/4 boundary? 4 > 3
  CHECK_NOTHROW(stamp_confounder(img, 3, rng));
}

TEST_CASE("stamp_confounder writes exactly one corner patch") {
  LabeledImage img = solid(16, 16, 3, 0.5, 1);
  for (uint64_t seed = 0; seed < 24; ++seed) {
    Rng rng(seed);
    StampResult r = stamp_confounder(img, 4, rng);
    REQUIRE(r.corner != Corner::none);
    CHECK(r.con_mask.count() == 16);  // patch_size^2
    // Mask support matches the named corner and pixels changed only there.
    const int h = 16, w = 16, p = 4;
    int r0 = 0, c0 = 0;
    switch (r.corner) {
      case Corner::TL: r0 = 0; c0 = 0; break;
      case Corner::TR: r0 = 0; c0 = w - p; break;
      case Corner::BL: r0 = h - p; c0 = 0; break;
      case Corner::BR: r0 = h - p; c0 = w - p; break;
      case Corner::none: break;
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const bool inside = y >= r0 && y < r0 + p && x >= c0 && x < c0 + p;
        CHECK(r.con_mask.values[static_cast<size_t>(y) * w + x] == (inside ? 1.0 : 0.0));
        for (int ch = 0; ch < 3; ++ch) {
          const double v = r.image.pixels[(static_cast<size_t>(y) * w + x) * 3 + ch];
          if (inside) {
            CHECK(v >= 0.0);
            CHECK(v < 1.0);
          } else {
            CHECK(v == 0.5);
          }
        }
      }
    }
  }
}

TEST_CASE("stamp_confounder hits all four corners across seeds") {
  LabeledImage img = solid(16, 16, 1, 0.0, 0);
  std::set<Corner> seen;
  for (uint64_t seed = 0; seed < 64; ++seed) {
    Rng rng(seed);
    seen.insert(stamp_confounder(img, 4, rng).corner);
  }
  CHECK(seen.size() == 4);
}

TEST_CASE("stamp_confounder is deterministic in the rng state") {
  LabeledImage img = solid(16, 16, 1, 0.1, 0);
  Rng a(555), b(555);
  StampResult ra = stamp_confounder(img, 4, a);
  StampResult rb = stamp_confounder(img, 4, b);
  CHECK(ra.corner == rb.corner);
  for (size_t i = 0; i < ra.image.pixels.numel(); ++i)
    CHECK(ra.image.pixels[i] == rb.image.pixels[i]);
}

TEST_CASE("derive_object_mask intensity_threshold on an all-black image") {
  LabeledImage img = solid(10, 10, 1, 0.0, 0);
  BinaryMask m = derive_object_mask(img, MaskStrategy::intensity_threshold(0.1));
  CHECK(m.count() == 0);
}

TEST_CASE("derive_object_mask intensity_threshold matches a white square exactly") {
  LabeledImage img = solid(28, 28, 1, 0.0, 0);
  for (int r = 9; r < 19; ++r)
    for (int c = 9; c < 19; ++c) img.pixels[static_cast<size_t>(r) * 28 + c] = 1.0;
  BinaryMask m = derive_object_mask(img, MaskStrategy::intensity_threshold(0.1));
  CHECK(m.count() == 100);
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c) {
      const bool in = r >= 9 && r < 19 && c >= 9 && c < 19;
      CHECK(m.values[static_cast<size_t>(r) * 28 + c] == (in ? 1.0 : 0.0));
    }
}

TEST_CASE("derive_object_mask complement_of_corners zeroes all four patches") {
  LabeledImage img = solid(12, 12, 3, 0.8, 0);
  BinaryMask m = derive_object_mask(img, MaskStrategy::complement_of_corners(3));
  CHECK(m.count() == 144 - 4 * 9);
  CHECK(m.values[0] == 0.0);                       // TL
  CHECK(m.values[11] == 0.0);                      // TR
  CHECK(m.values[static_cast<size_t>(11) * 12] == 0.0);       // BL
  CHECK(m.values[static_cast<size_t>(11) * 12 + 11] == 0.0);  // BR
  CHECK(m.values[static_cast<size_t>(5) * 12 + 5] == 1.0);    // center survives
}

TEST_CASE("derive_object_mask provided_segmentation binarizes at 0.5") {
  LabeledImage img = solid(4, 4, 1, 0.0, 0);
  Tensor seg({4, 4});
  seg[0] = 0.49;
  seg[1] = 0.5;
  seg[2] = 0.51;
  seg[3] = 1.0;
  BinaryMask m = derive_object_mask(img, MaskStrategy::provided_segmentation(seg));
  CHECK(m.values[0] == 0.0);
  CHECK(m.values[1] == 1.0);  // ties at 0.5 count as masked
  CHECK(m.values[2] == 1.0);
  CHECK(m.values[3] == 1.0);
}

TEST_CASE("centroid of simple masks") {
  BinaryMask single = BinaryMask::zeros(8, 8);
  single.values[static_cast<size_t>(2) * 8 + 5] = 1.0;
  auto g1 = centroid(single);
  CHECK(g1.first == doctest::Approx(2.0));
  CHECK(g1.second == doctest::Approx(5.0));

  BinaryMask full = BinaryMask::zeros(14, 14);
  for (size_t i = 0; i < full.values.numel(); ++i) full.values[i] = 1.0;
  auto g2 = centroid(full);
  CHECK(g2.first == doctest::Approx(6.5));
  CHECK(g2.second == doctest::Approx(6.5));

  CHECK_THROWS_AS(centroid(BinaryMask::zeros(4, 4)), EmptyMaskError);
}

TEST_CASE("build_decoy_dataset layout, splits, and round-trip") {
  TempDir tmp;
  SourceDataset src = toy_source(10, 6);
  DecoyParams params;
  params.patch_size = 3;
  params.seed = 2024;
  params.strategy = MaskStrategy::intensity_threshold(0.1);
  DecoyDatasetManifest manifest = build_decoy_dataset(src, params, tmp.sub("ds"));

  CHECK(manifest.records.size() == 16);
  CHECK(manifest.split("train").size() == 10);
  CHECK(manifest.split("test").size() == 6);
  CHECK(manifest.strategy == "intensity_threshold(0.1)");
  CHECK(manifest.patch_size == 3);

  auto train = load_split(manifest, "train");
  auto test = load_split(manifest, "test");
  REQUIRE(train.size() == 10);
  REQUIRE(test.size() == 6);

  for (const auto& inst : train) {
    CHECK(inst.con_mask.count() == 9);  // patch^2 confounded pixels
    CHECK(inst.corner != Corner::none);
    CHECK(inst.obj_mask.count() == 16);  // the bright 4x4 block
  }
  for (const auto& inst : test) {
    CHECK(inst.con_mask.count() == 0);  // clean test split
    CHECK(inst.corner == Corner::none);
  }
  // Labels survive the round trip.
  for (size_t i = 0; i < train.size(); ++i) CHECK(train[i].image.label == static_cast<int>(i % 3));
}

TEST_CASE("build_decoy_dataset is byte-identical across runs with one seed") {
  TempDir tmp;
  SourceDataset src = toy_source(8, 4);
  DecoyParams params;
  params.patch_size = 3;
  params.seed = 99;
  params.strategy = MaskStrategy::intensity_threshold(0.1);
  build_decoy_dataset(src, params, tmp.sub("a"));
  build_decoy_dataset(src, params, tmp.sub("b"));
  auto ta = file_tree(tmp.sub("a"));
  auto tb = file_tree(tmp.sub("b"));
  REQUIRE(ta.size() == tb.size());
  CHECK(ta == tb);

  params.seed = 100;  // a different seed must change some train image
  build_decoy_dataset(src, params, tmp.sub("c"));
  CHECK(file_tree(tmp.sub("c")) != ta);
}

TEST_CASE("manifest corner names round-trip") {
  for (Corner c : {Corner::none, Corner::TL, Corner::TR, Corner::BL, Corner::BR})
    CHECK(corner_from_name(corner_name(c)) == c);
  CHECK_THROWS_AS(corner_from_name("XX"), ValueError);
}

TEST_CASE("load_manifest rejects a directory without manifest.jsonl") {
  TempDir tmp;
  CHECK_THROWS_AS(load_manifest(tmp.str()), IoError);
}
