#pragma once

#include <algorithm>
#include <cstdint>

#include "bihl/image.hpp"

namespace bihl {

// Axis-aligned box in pixels, top-left anchored.
struct Box {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const { return (long long)w * h; }
  int x2() const { return x + w; }  // exclusive
  int y2() const { return y + h; }
  bool operator==(const Box&) const = default;
};

// A proposal: box geometry plus objectness score and the pyramid scale it
// came from. Pre-merge boxes have the template geometry w = 16*2^n,
// h = 16*2^m; merged boxes are enclosing unions and may not.
struct ScoredBox {
  Box box;
  double score = 0.0;
  ScaleSpec scale;
};

inline long long intersection_area(const Box& a, const Box& b) {
  const int ix = std::max(0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  return (long long)ix * iy;
}

// Intersection over union; 0 for disjoint or degenerate boxes.
inline double iou(const Box& a, const Box& b) {
  const long long inter = intersection_area(a, b);
  if (inter == 0) return 0.0;
  const long long uni = a.area() + b.area() - inter;
  return double(inter) / double(uni);
}

// Smallest box containing both inputs.
inline Box enclosing_union(const Box& a, const Box& b) {
  const int x1 = std::min(a.x, b.x);
  const int y1 = std::min(a.y, b.y);
  const int x2 = std::max(a.x2(), b.x2());
  const int y2 = std::max(a.y2(), b.y2());
  return {x1, y1, x2 - x1, y2 - y1};
}

}  // namespace bihl
