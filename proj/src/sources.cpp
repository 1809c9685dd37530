#include "xbld/sources.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>

#include "httplib.h"
#include "xbld/errors.hpp"
#include "xbld/image.hpp"

namespace fs = std::filesystem;

namespace xbld {
namespace {

uint32_t read_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw IoError("short read on " + path);
  return buf;
}

}  // namespace

std::string default_cache_dir() {
  if (const char* env = std::getenv("XBLD_DATA_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home)
    return (fs::path(home) / ".cache" / "xbld").string();
  return ".xbld-cache";
}

bool fetch_url(const std::string& url, const std::string& dest_path) {
  std::string scheme, rest;
  if (url.rfind("http://", 0) == 0) {
    scheme = "http";
    rest = url.substr(7);
  } else if (url.rfind("https://", 0) == 0) {
    scheme = "https";
    rest = url.substr(8);
  } else {
    return false;
  }
  const auto slash = rest.find('/');
  const std::string host_port = slash == std::string::npos ? rest : rest.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : rest.substr(slash);

  httplib::Client cli((scheme + "://" + host_port).c_str());
  cli.set_follow_location(true);
  cli.set_connection_timeout(20, 0);
  cli.set_read_timeout(120, 0);
  auto res = cli.Get(path.c_str());
  if (!res || res->status < 200 || res->status >= 300) return false;

  fs::create_directories(fs::path(dest_path).parent_path());
  const std::string tmp = dest_path + ".part";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) return false;
    out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
    if (!out) return false;
  }
  std::error_code ec;
  fs::rename(tmp, dest_path, ec);
  return !ec;
}

void gunzip_file(const std::string& src, const std::string& dst) {
  gzFile in = gzopen(src.c_str(), "rb");
  if (!in) throw IoError("cannot open gzip file " + src);
  std::ofstream out(dst, std::ios::binary);
  if (!out) {
    gzclose(in);
    throw IoError("cannot write " + dst);
  }
  char buf[1 << 16];
  int n;
  while ((n = gzread(in, buf, sizeof(buf))) > 0) out.write(buf, n);
  const bool read_ok = n == 0;
  gzclose(in);
  if (!read_ok || !out) throw IoError("gunzip failed for " + src);
}

void untar_gz(const std::string& archive, const std::string& dest_dir) {
  gzFile in = gzopen(archive.c_str(), "rb");  // gzread passes plain tar through
  if (!in) throw IoError("cannot open archive " + archive);
  auto fail = [&](const std::string& msg) {
    gzclose(in);
    throw IoError(msg + ": " + archive);
  };

  uint8_t header[512];
  while (true) {
    const int got = gzread(in, header, sizeof(header));
    if (got == 0) break;  // clean EOF
    if (got != 512) fail("truncated tar header");
    bool all_zero = true;
    for (uint8_t b : header)
      if (b) {
        all_zero = false;
        break;
      }
    if (all_zero) break;  // end-of-archive marker

    char name[101] = {0};
    std::memcpy(name, header, 100);
    char size_field[13] = {0};
    std::memcpy(size_field, header + 124, 12);
    const long size = std::strtol(size_field, nullptr, 8);
    if (size < 0) fail("bad size in tar header");
    const char type = static_cast<char>(header[156]);

    const fs::path rel(name);
    // Refuse path escapes from hostile archives.
    for (const auto& part : rel)
      if (part == "..") fail("tar path escapes destination");
    const fs::path dest = fs::path(dest_dir) / rel;

    if (type == '5') {
      fs::create_directories(dest);
    } else if (type == '0' || type == '\0') {
      fs::create_directories(dest.parent_path());
      std::ofstream out(dest, std::ios::binary);
      if (!out) fail("cannot write " + dest.string());
      long remaining = size;
      char buf[1 << 16];
      while (remaining > 0) {
        const int chunk = static_cast<int>(std::min<long>(remaining, sizeof(buf)));
        if (gzread(in, buf, chunk) != chunk) fail("truncated tar data");
        out.write(buf, chunk);
        remaining -= chunk;
      }
      if (!out) fail("write failed for " + dest.string());
    } else {
      // skip links/devices
      long remaining = size;
      char buf[1 << 16];
      while (remaining > 0) {
        const int chunk = static_cast<int>(std::min<long>(remaining, sizeof(buf)));
        if (gzread(in, buf, chunk) != chunk) fail("truncated tar data");
        remaining -= chunk;
      }
    }
    const long pad = (512 - size % 512) % 512;
    if (pad > 0) {
      char buf[512];
      if (gzread(in, buf, static_cast<unsigned>(pad)) != pad) fail("truncated tar padding");
    }
  }
  gzclose(in);
}

IdxImages read_idx_images(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() < 16) throw IoError("IDX image file too small: " + path);
  if (read_be32(buf.data()) != 0x00000803) throw IoError("bad IDX image magic in " + path);
  IdxImages out;
  out.count = static_cast<int>(read_be32(buf.data() + 4));
  out.rows = static_cast<int>(read_be32(buf.data() + 8));
  out.cols = static_cast<int>(read_be32(buf.data() + 12));
  const size_t expect = 16 + static_cast<size_t>(out.count) * out.rows * out.cols;
  if (buf.size() < expect) throw IoError("IDX image file truncated: " + path);
  out.pixels.assign(buf.begin() + 16, buf.begin() + static_cast<long>(expect));
  return out;
}

std::vector<uint8_t> read_idx_labels(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() < 8) throw IoError("IDX label file too small: " + path);
  if (read_be32(buf.data()) != 0x00000801) throw IoError("bad IDX label magic in " + path);
  const int count = static_cast<int>(read_be32(buf.data() + 4));
  if (buf.size() < 8 + static_cast<size_t>(count)) throw IoError("IDX label file truncated: " + path);
  return std::vector<uint8_t>(buf.begin() + 8, buf.begin() + 8 + count);
}

namespace {

struct IdxSplit {
  std::shared_ptr<IdxImages> images;
  std::shared_ptr<std::vector<uint8_t>> labels;
};

SplitView idx_split_view(IdxSplit split, int limit) {
  SplitView v;
  v.count = limit > 0 ? std::min(limit, split.images->count) : split.images->count;
  v.get = [split](int i) {
    const auto& im = *split.images;
    LabeledImage out;
    out.pixels = Tensor({im.rows, im.cols, 1});
    const size_t base = static_cast<size_t>(i) * im.rows * im.cols;
    for (size_t p = 0; p < static_cast<size_t>(im.rows) * im.cols; ++p)
      out.pixels[p] = im.pixels[base + p] / 255.0;
    out.label = (*split.labels)[static_cast<size_t>(i)];
    return out;
  };
  return v;
}

void ensure_fmnist_files(const fs::path& dir, const SourceOptions& opts) {
  static const char* kFiles[4] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                  "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  fs::create_directories(dir);
  for (const char* f : kFiles) {
    const fs::path plain = dir / f;
    if (fs::exists(plain)) continue;
    const fs::path gz = dir / (std::string(f) + ".gz");
    if (!fs::exists(gz)) {
      if (!opts.allow_download)
        throw IoError("missing " + plain.string() + " and downloads are disabled");
      const std::string url = opts.fmnist_base_url + "/" + f + ".gz";
      if (!fetch_url(url, gz.string()))
        throw IoError("failed to download " + url + "; place the IDX files under " +
                      dir.string() + " manually");
    }
    gunzip_file(gz.string(), plain.string());
  }
}

SourceDataset open_fmnist(const SourceOptions& opts) {
  const fs::path dir = fs::path(opts.cache_dir.empty() ? default_cache_dir() : opts.cache_dir) /
                       "fashion-mnist";
  ensure_fmnist_files(dir, opts);
  IdxSplit train{std::make_shared<IdxImages>(read_idx_images((dir / "train-images-idx3-ubyte").string())),
                 std::make_shared<std::vector<uint8_t>>(read_idx_labels((dir / "train-labels-idx1-ubyte").string()))};
  IdxSplit test{std::make_shared<IdxImages>(read_idx_images((dir / "t10k-images-idx3-ubyte").string())),
                std::make_shared<std::vector<uint8_t>>(read_idx_labels((dir / "t10k-labels-idx1-ubyte").string()))};
  if (train.images->count != static_cast<int>(train.labels->size()) ||
      test.images->count != static_cast<int>(test.labels->size()))
    throw IoError("fashion-mnist image/label counts disagree");
  SourceDataset ds;
  ds.name = "fmnist";
  ds.num_classes = 10;
  ds.train = idx_split_view(train, opts.train_limit);
  ds.test = idx_split_view(test, opts.test_limit);
  return ds;
}

SplitView cifar_split_view(std::shared_ptr<std::vector<uint8_t>> records, int limit) {
  constexpr int kRecord = 1 + 3072;
  SplitView v;
  const int total = static_cast<int>(records->size() / kRecord);
  v.count = limit > 0 ? std::min(limit, total) : total;
  v.get = [records](int i) {
    const uint8_t* rec = records->data() + static_cast<size_t>(i) * kRecord;
    LabeledImage out;
    out.label = rec[0];
    out.pixels = Tensor({32, 32, 3});
    // CIFAR stores planar R,G,B; we emit interleaved HWC.
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < 1024; ++p)
        out.pixels[static_cast<size_t>(p) * 3 + ch] = rec[1 + ch * 1024 + p] / 255.0;
    return out;
  };
  return v;
}

SourceDataset open_cifar10(const SourceOptions& opts) {
  const fs::path cache(opts.cache_dir.empty() ? default_cache_dir() : opts.cache_dir);
  const fs::path dir = cache / "cifar-10-batches-bin";
  if (!fs::exists(dir / "test_batch.bin")) {
    const fs::path archive = cache / "cifar-10-binary.tar.gz";
    if (!fs::exists(archive)) {
      if (!opts.allow_download)
        throw IoError("missing " + dir.string() + " and downloads are disabled");
      if (!fetch_url(opts.cifar_url, archive.string()))
        throw IoError("failed to download " + opts.cifar_url + "; extract the binary batches to " +
                      dir.string() + " manually");
    }
    untar_gz(archive.string(), cache.string());
  }
  auto train = std::make_shared<std::vector<uint8_t>>();
  for (int b = 1; b <= 5; ++b) {
    const auto part = read_file((dir / ("data_batch_" + std::to_string(b) + ".bin")).string());
    train->insert(train->end(), part.begin(), part.end());
  }
  auto test = std::make_shared<std::vector<uint8_t>>(read_file((dir / "test_batch.bin").string()));
  SourceDataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.train = cifar_split_view(train, opts.train_limit);
  ds.test = cifar_split_view(test, opts.test_limit);
  return ds;
}

struct PngEntry {
  std::string image;
  std::string mask;  // optional
  int label;
};

SplitView png_split_view(std::shared_ptr<std::vector<PngEntry>> entries, int limit, int side) {
  SplitView v;
  v.count = limit > 0 ? std::min<int>(limit, static_cast<int>(entries->size()))
                      : static_cast<int>(entries->size());
  v.get = [entries, side](int i) {
    const auto& e = (*entries)[static_cast<size_t>(i)];
    LabeledImage out;
    Tensor px = image_to_tensor(read_png(e.image));
    if (px.dim(0) != side || px.dim(1) != side) px = resize_bilinear(px, side, side);
    if (px.ndim() == 2) px = px.reshaped({px.dim(0), px.dim(1), 1});
    out.pixels = px;
    out.label = e.label;
    return out;
  };
  v.get_segmentation = [entries, side](int i) -> Tensor {
    const auto& e = (*entries)[static_cast<size_t>(i)];
    if (e.mask.empty()) throw IoError("no segmentation mask recorded for " + e.image);
    Tensor m = image_to_tensor(read_png(e.mask));
    if (m.ndim() == 3) {
      // collapse channels by mean before binarization
      Tensor g({m.dim(0), m.dim(1)});
      const int c = m.dim(2);
      for (int p = 0; p < m.dim(0) * m.dim(1); ++p) {
        double acc = 0;
        for (int ch = 0; ch < c; ++ch) acc += m[static_cast<size_t>(p) * c + ch];
        g[static_cast<size_t>(p)] = acc / c;
      }
      m = g;
    }
    if (m.dim(0) != side || m.dim(1) != side) m = resize_bilinear(m, side, side);
    return m;
  };
  return v;
}

SourceDataset open_png_dir(const std::string& root_str, const SourceOptions& opts) {
  const fs::path root(root_str);
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root_str);

  auto scan_split = [&](const std::string& split) {
    const fs::path split_dir = root / split;
    if (!fs::is_directory(split_dir)) throw IoError("missing split directory " + split_dir.string());
    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(split_dir))
      if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw IoError("no class directories under " + split_dir.string());

    auto entries = std::make_shared<std::vector<PngEntry>>();
    const fs::path mask_root = root / (split + "_masks");
    for (size_t ci = 0; ci < classes.size(); ++ci) {
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(split_dir / classes[ci]))
        if (e.is_regular_file() && e.path().extension() == ".png")
          files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        PngEntry entry;
        entry.image = f;
        entry.label = static_cast<int>(ci);
        const fs::path candidate = mask_root / classes[ci] / fs::path(f).filename();
        if (fs::exists(candidate)) entry.mask = candidate.string();
        entries->push_back(std::move(entry));
      }
    }
    return std::pair{entries, classes.size()};
  };

  auto [train_entries, n_train_classes] = scan_split("train");
  auto [test_entries, n_test_classes] = scan_split("test");

  SourceDataset ds;
  ds.name = root.filename().string();
  ds.num_classes = static_cast<int>(std::max(n_train_classes, n_test_classes));
  const int side = 224;
  ds.train = png_split_view(train_entries, opts.train_limit, side);
  ds.test = png_split_view(test_entries, opts.test_limit, side);
  return ds;
}

}  // namespace

SourceDataset open_source(const std::string& name_or_path, const SourceOptions& opts) {
  if (name_or_path == "fmnist") return open_fmnist(opts);
  if (name_or_path == "cifar10") return open_cifar10(opts);
  return open_png_dir(name_or_path, opts);
}

}  // namespace xbld
