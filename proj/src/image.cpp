#include "bihl/image.hpp"

#include <cmath>

#include "bihl/error.hpp"

namespace bihl {

ImagePlane::ImagePlane(int w, int h, std::uint8_t fill)
    : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {}

bool scale_valid(int m, int n) {
  if (m == 4 && n == 3) return true;
  if (m < 0 || m > 3) return false;
  if (n < 0 || n > 4) return false;
  return std::abs(n - m) <= 2;
}

const std::vector<ScaleSpec>& enumerate_scales() {
  static const std::vector<ScaleSpec> scales = [] {
    std::vector<ScaleSpec> out;
    for (int m = 0; m <= 4; ++m)
      for (int n = 0; n <= 4; ++n)
        if (scale_valid(m, n)) out.push_back({m, n});
    return out;  // loop order is already lexicographic by (m, n)
  }();
  return scales;
}

ImagePlane to_grayscale(const RgbImage& rgb) {
  if (rgb.width <= 0 || rgb.height <= 0)
    throw Error("too-small", "to_grayscale: zero-dimension input");
  ImagePlane out(rgb.width, rgb.height);
  const std::uint8_t* p = rgb.data.data();
  for (std::size_t i = 0, npx = out.data.size(); i < npx; ++i, p += 3) {
    double luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    long v = std::lround(luma);
    out.data[i] = std::uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
  }
  return out;
}

ImagePlane downsample(const ImagePlane& src, const ScaleSpec& s) {
  const int bh = 1 << s.m;
  const int bw = 1 << s.n;
  if (src.height < bh || src.width < bw)
    throw Error("scale-too-large",
                "downsample: image " + std::to_string(src.width) + "x" +
                    std::to_string(src.height) + " smaller than one " +
                    std::to_string(bw) + "x" + std::to_string(bh) + " block");
  if (s.m == 0 && s.n == 0) return src;

  ImagePlane out(src.width / bw, src.height / bh);
  const int shift = s.m + s.n;           // block area is 2^(m+n)
  const unsigned half = 1u << (shift - 1);  // block sums are nonnegative, so
                                            // half-away-from-zero == half-up
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      unsigned sum = 0;
      for (int r = 0; r < bh; ++r) {
        const std::uint8_t* row = src.row(oy * bh + r) + std::size_t(ox) * bw;
        for (int c = 0; c < bw; ++c) sum += row[c];
      }
      out.px(oy, ox) = std::uint8_t((sum + half) >> shift);
    }
  }
  return out;
}

}  // namespace bihl
