#pragma once

#include <cstdint>
#include <vector>

#include "bihl/image.hpp"

namespace bihl {

// Horizontal high-frequency response map of one pyramid level: a [-1 1]/1.41
// high-pass along rows and a [1 1]/1.41 low-pass down columns, both in steps
// of two, with the magnitude quantized to 8 bits.
struct HlFeatureMap {
  int width = 0;   // cells, = floor(source width / 2)
  int height = 0;  // cells, = floor(source height / 2)
  std::vector<std::uint8_t> data;
  ScaleSpec scale;  // scale of the source image

  std::uint8_t at(int y, int x) const { return data[std::size_t(y) * width + x]; }
  const std::uint8_t* row(int y) const { return data.data() + std::size_t(y) * width; }
};

// Computes the HL map of `img` (already downsampled to scale `s`; `s` is
// carried into the result as provenance). For each output cell,
//   raw = (I(2y,2x+1) - I(2y,2x) + I(2y+1,2x+1) - I(2y+1,2x)) / (1.41 * 1.41)
// and the stored value is clamp(round(|raw|), 0, 255), rounding half away
// from zero. Throws Error("too-small") when either dimension is < 2.
HlFeatureMap hl_map(const ImagePlane& img, const ScaleSpec& s);

}  // namespace bihl
