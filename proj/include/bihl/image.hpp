#pragma once

#include <compare>
#include <cstdint>
#include <vector>

namespace bihl {

// Single-channel 8-bit image, row-major storage.
struct ImagePlane {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  ImagePlane() = default;
  ImagePlane(int w, int h, std::uint8_t fill = 0);

  std::uint8_t px(int y, int x) const { return data[std::size_t(y) * width + x]; }
  std::uint8_t& px(int y, int x) { return data[std::size_t(y) * width + x]; }
  const std::uint8_t* row(int y) const { return data.data() + std::size_t(y) * width; }
  std::uint8_t* row(int y) { return data.data() + std::size_t(y) * width; }
  bool empty() const { return width <= 0 || height <= 0; }

  bool operator==(const ImagePlane&) const = default;
};

// Interleaved 8-bit RGB image (r,g,b per pixel, row-major).
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;
};

// One pyramid level: rows are reduced by 2^m, columns by 2^n.
// m governs box height (16*2^m px), n governs box width (16*2^n px).
struct ScaleSpec {
  int m = 0;
  int n = 0;
  auto operator<=>(const ScaleSpec&) const = default;
};

// Membership test for the fixed anisotropic scale set:
// m in {0..3} with |n - m| <= 2 and 0 <= n <= 4, plus the extra level (4,3).
bool scale_valid(int m, int n);

// The full scale set, sorted lexicographically by (m, n). Constant.
const std::vector<ScaleSpec>& enumerate_scales();

// Luma conversion: round(0.299 R + 0.587 G + 0.114 B) per pixel.
// Throws Error("too-small") on a zero-dimension input.
ImagePlane to_grayscale(const RgbImage& rgb);

// Block-mean downsampling by (2^m, 2^n). Output is floor(h / 2^m) x
// floor(w / 2^n); trailing rows/columns without a complete block are dropped.
// Each output pixel is the mean of its block, rounded half away from zero.
// Throws Error("scale-too-large") when the image is smaller than one block.
ImagePlane downsample(const ImagePlane& src, const ScaleSpec& s);

}  // namespace bihl
