#pragma once

#include <limits>
#include <vector>

#include "bihl/binarized_model.hpp"
#include "bihl/boxes.hpp"
#include "bihl/hl_feature.hpp"
#include "bihl/image.hpp"
#include "bihl/merger.hpp"

namespace bihl {

// Thresholds and caps of the proposal stage.
struct ProposerConfig {
  double min_score = 0.0;   // T_c: drop cells scoring below this
  int min_window_max = 8;   // T_mval: drop windows whose max HL value is below this
  double nms_iou = 0.875;   // suppress overlap beyond this IoU
  int per_scale_cap = 1100; // container cap applied per scale after NMS
  int budget = 10000;       // global proposal budget
};

// Dense classifier responses of one scale. Entry (y, x) is the score of the
// 8x8 window anchored at that cell; windows rejected by the T_mval background
// filter hold -infinity.
struct ScoreMatrix {
  ScaleSpec scale;
  int rows = 0;  // map.height - 7
  int cols = 0;  // map.width - 7
  std::vector<double> scores;

  double at(int y, int x) const { return scores[std::size_t(y) * cols + x]; }
  static constexpr double kFiltered = -std::numeric_limits<double>::infinity();
};

// Scores every 8x8 window of the image's HL map at scale s (the image is
// downsampled internally). Returns an empty matrix (rows = cols = 0) when the
// scale leaves no complete window, including when the scale exceeds the image.
ScoreMatrix score_scale(const ImagePlane& img, const ScaleSpec& s,
                        const BinarizedModel& model,
                        const ProposerConfig& cfg = {});

// Original-image window of feature cell (y, x) at scale s:
// (x, y) = (2x*2^n, 2y*2^m), size 16*2^n by 16*2^m, clipped to the image when
// dimensions are given.
Box box_of_cell(const ScaleSpec& s, int y, int x, int img_w = 0, int img_h = 0);

// Score-threshold filter plus greedy overlap suppression. Boxes scoring below
// cfg.min_score are dropped; survivors are sorted score-descending (ties by
// (scale, y, x)) and kept only if their IoU with every previously kept box
// stays <= cfg.nms_iou; finally each scale keeps at most cfg.per_scale_cap
// boxes. Output is score-descending.
std::vector<ScoredBox> nms(std::vector<ScoredBox> boxes, const ProposerConfig& cfg);

// Wall-clock breakdown of one propose() call, for cost accounting.
struct ProposeTimings {
  double total_s = 0.0;
  double merge_s = 0.0;
};

// Full pipeline: every model scale is downsampled, filtered, scored, and
// thresholded; NMS assembles the container; optionally the border merge runs
// on the top merge_cfg.v_cap entries (post-NMS boxes beyond the cap are
// appended after the merged set); the result is truncated to cfg.budget.
// Deterministic for fixed inputs.
std::vector<ScoredBox> propose(const ImagePlane& img, const ModelFile& mf,
                               const ProposerConfig& cfg = {},
                               const MergeConfig& merge_cfg = {},
                               bool merge = true,
                               ProposeTimings* timings = nullptr);

}  // namespace bihl
