#include "xbld/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "xbld/errors.hpp"

namespace xbld {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open PNG for reading: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  ImageU8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed while decoding " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.h = static_cast<int>(png_get_image_height(png, info));
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.c = static_cast<int>(png_get_channels(png, info));
  if (img.c != 1 && img.c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported channel count after conversion in " + path);
  }
  img.pixels.resize(img.size());
  rows.resize(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = img.pixels.data() + static_cast<size_t>(y) * img.w * img.c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.c != 1 && img.c != 3) throw ValueError("write_png: channels must be 1 or 3");
  if (img.h <= 0 || img.w <= 0) throw ValueError("write_png: empty image");
  if (img.pixels.size() != img.size()) throw ValueError("write_png: pixel buffer size mismatch");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open PNG for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed while encoding " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * img.w * img.c);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor image_to_tensor(const ImageU8& img) {
  Tensor t({img.h, img.w, img.c});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
  if (t.ndim() != 3) throw ShapeError("tensor_to_image: need [H,W,C]");
  ImageU8 img;
  img.h = t.dim(0);
  img.w = t.dim(1);
  img.c = t.dim(2);
  if (img.c != 1 && img.c != 3) throw ValueError("tensor_to_image: channels must be 1 or 3");
  img.pixels.resize(img.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(t[i], 0.0, 1.0);
    img.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
  if (img.ndim() != 2 && img.ndim() != 3) throw ShapeError("resize_bilinear: need [H,W] or [H,W,C]");
  if (oh <= 0 || ow <= 0) throw ValueError("resize_bilinear: target must be positive");
  const int h = img.dim(0), w = img.dim(1);
  const int c = img.ndim() == 3 ? img.dim(2) : 1;
  std::vector<int> out_shape = img.ndim() == 3 ? std::vector<int>{oh, ow, c}
                                               : std::vector<int>{oh, ow};
  Tensor out(out_shape);
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double v00 = img[(static_cast<size_t>(y0) * w + x0) * c + ch];
        const double v01 = img[(static_cast<size_t>(y0) * w + x1) * c + ch];
        const double v10 = img[(static_cast<size_t>(y1) * w + x0) * c + ch];
        const double v11 = img[(static_cast<size_t>(y1) * w + x1) * c + ch];
        const double top = v00 + wx * (v01 - v00);
        const double bot = v10 + wx * (v11 - v10);
        out[(static_cast<size_t>(y) * ow + x) * c + ch] = top + wy * (bot - top);
      }
    }
  }
  return out;
}

}  // namespace xbld
