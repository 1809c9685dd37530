#pragma once

#include <string>
#include <vector>

#include "xbld/dataset.hpp"

namespace xbld {

/// Where builtin datasets are cached. Honors XBLD_DATA_DIR, falling back to
/// ~/.cache/xbld.
std::string default_cache_dir();

struct SourceOptions {
  std::string cache_dir;  // empty -> default_cache_dir()
  int train_limit = 0;    // 0 = whole split
  int test_limit = 0;
  // Base URLs are overridable so tests can point at a local server.
  std::string fmnist_base_url =
      "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com";
  std::string cifar_url = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
  bool allow_download = true;
};

/// Opens "fmnist", "cifar10", or a local PNG directory
/// (<dir>/<split>/<class>/*.png, optional <dir>/<split>_masks/<class>/ for
/// segmentation). Builtin names download into the cache on first use.
SourceDataset open_source(const std::string& name_or_path, const SourceOptions& opts = {});

/// Plain HTTP(S) GET to a file. Returns false on transport failure or
/// non-2xx status.
bool fetch_url(const std::string& url, const std::string& dest_path);

/// .gz -> plain file.
void gunzip_file(const std::string& src, const std::string& dst);

/// Extracts a (possibly gzipped) ustar archive into dest_dir. Only regular
/// files and directories are materialized.
void untar_gz(const std::string& archive, const std::string& dest_dir);

/// IDX (MNIST-style) containers.
struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> pixels;  // count*rows*cols
};
IdxImages read_idx_images(const std::string& path);
std::vector<uint8_t> read_idx_labels(const std::string& path);

}  // namespace xbld
