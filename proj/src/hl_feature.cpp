#include "bihl/hl_feature.hpp"

#include <array>
#include <cmath>

#include "bihl/error.hpp"

namespace bihl {

namespace {

// Quantization table for |numerator| in [0, 510]: round(v / (1.41 * 1.41))
// capped at 255. The divisor is the literal filter constant squared, kept
// exactly as written so results are reproducible across platforms.
const std::array<std::uint8_t, 511>& quant_table() {
  static const std::array<std::uint8_t, 511> table = [] {
    std::array<std::uint8_t, 511> t{};
    for (int v = 0; v <= 510; ++v) {
      double q = std::floor(double(v) / 1.9881 + 0.5);
      t[v] = std::uint8_t(q > 255.0 ? 255 : q);
    }
    return t;
  }();
  return table;
}

}  // namespace

HlFeatureMap hl_map(const ImagePlane& img, const ScaleSpec& s) {
  if (img.width < 2 || img.height < 2)
    throw Error("too-small", "hl_map: need at least 2x2, got " +
                                 std::to_string(img.width) + "x" +
                                 std::to_string(img.height));
  HlFeatureMap map;
  map.width = img.width / 2;
  map.height = img.height / 2;
  map.scale = s;
  map.data.resize(std::size_t(map.width) * map.height);

  const auto& q = quant_table();
  for (int y = 0; y < map.height; ++y) {
    const std::uint8_t* r0 = img.row(2 * y);
    const std::uint8_t* r1 = img.row(2 * y + 1);
    std::uint8_t* out = map.data.data() + std::size_t(y) * map.width;
    for (int x = 0; x < map.width; ++x) {
      int num = int(r0[2 * x + 1]) - int(r0[2 * x]) + int(r1[2 * x + 1]) - int(r1[2 * x]);
      out[x] = q[num < 0 ? -num : num];
    }
  }
  return map;
}

}  // namespace bihl
