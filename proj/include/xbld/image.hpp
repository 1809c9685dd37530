#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xbld/tensor.hpp"

namespace xbld {

/// 8-bit image, row-major HWC, c in {1, 3}.
struct ImageU8 {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<uint8_t> pixels;

  size_t size() const { return static_cast<size_t>(h) * w * c; }
};

/// Reads a PNG as 8-bit gray or RGB (palette/16-bit/alpha inputs are
/// converted; alpha is dropped).
ImageU8 read_png(const std::string& path);

/// Writes gray (c=1) or RGB (c=3) 8-bit PNG.
void write_png(const std::string& path, const ImageU8& img);

/// [0,255] bytes -> [0,1] doubles, shape [H,W,C].
Tensor image_to_tensor(const ImageU8& img);

/// [0,1] doubles (clamped) -> rounded bytes.
ImageU8 tensor_to_image(const Tensor& t);

/// Bilinear resample of an [H,W] or [H,W,C] tensor to (oh, ow) using the
/// half-pixel-center convention. Constant inputs stay constant.
Tensor resize_bilinear(const Tensor& img, int oh, int ow);

}  // namespace xbld
