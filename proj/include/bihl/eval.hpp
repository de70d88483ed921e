#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bihl/annotations.hpp"
#include "bihl/binarized_model.hpp"
#include "bihl/boxes.hpp"
#include "bihl/image.hpp"
#include "bihl/merger.hpp"
#include "bihl/proposer.hpp"

namespace bihl {

// Fraction of ground-truth boxes whose best IoU against the top-`budget`
// proposals of their image reaches `iou_thr`. The outer vectors are parallel
// per image. Throws Error("no-gt") when there is no ground truth at all and
// Error("config-mismatch") when the per-image lists disagree in length.
double detection_rate(const std::vector<std::vector<ScoredBox>>& proposals,
                      const std::vector<std::vector<AnnotatedBox>>& ground_truth,
                      double iou_thr, int budget);

struct MaboResult {
  double mabo = 0.0;  // unweighted mean of the per-class ABO values
  std::vector<std::pair<std::string, double>> per_class;  // sorted by class
};

// Average best overlap per class (mean over that class's ground-truth boxes
// of the best IoU any top-`budget` proposal achieves), averaged across
// classes. Errors as detection_rate.
MaboResult mabo(const std::vector<std::vector<ScoredBox>>& proposals,
                const std::vector<std::vector<AnnotatedBox>>& ground_truth,
                int budget);

enum class PerturbKind { kScale, kRotate, kIllumination, kJpeg, kBlur, kSaltPepper };

// A perturbation family plus an index into its level ladder (see
// perturb_ladder). Levels are 0-based.
struct Perturbation {
  PerturbKind kind;
  int level = 0;
};

// Parameter ladder of one family: scale factors {0.5, 0.707, 1.414, 2},
// rotation degrees {5, 10, 15}, gamma {0.5, 0.8, 1.25, 2}, JPEG quality
// {50, 20, 10, 5}, blur sigma {0, 1, 2, 4, 8} (sigma 0 is the identity),
// salt & pepper fraction {0.01, 0.03, 0.05, 0.1}.
const std::vector<double>& perturb_ladder(PerturbKind kind);

const char* perturb_kind_name(PerturbKind kind);

// Affine coordinate map from the perturbed frame back to the original frame
// (edge coordinates: the point (0,0) is the image's top-left corner).
struct AffineMap {
  double a = 1, b = 0, tx = 0;  // x_orig = a x + b y + tx
  double c = 0, d = 1, ty = 0;  // y_orig = c x + d y + ty

  std::pair<double, double> apply(double x, double y) const {
    return {a * x + b * y + tx, c * x + d * y + ty};
  }
  AffineMap inverted() const;
  bool is_identity() const;
};

struct PerturbResult {
  ImagePlane image;
  AffineMap to_original;
  // For the JPEG family only: the encoded artifact the image was decoded
  // from, so callers can write the true compressed file.
  std::vector<std::uint8_t> jpeg_bytes;
};

// Applies one perturbation. Geometric kinds (scale, rotate) carry a
// non-identity map; the rest return the identity. The salt & pepper family
// flips exactly round(fraction * W * H) distinct pixels to 0 or 255 under the
// given seed. Throws Error("unsupported-level") for a level outside the
// family's ladder.
PerturbResult perturb(const ImagePlane& img, const Perturbation& p,
                      std::uint64_t seed = 0);

// Proposal stability under one perturbation: proposals of the perturbed
// image are projected back to the original frame (axis-aligned hull of the
// mapped corners), boxes that leave either frame are excluded on both sides,
// and the remaining top-`top` lists are matched greedily by descending IoU.
// Returns matched pairs with IoU >= iou_thr divided by the larger list size;
// two empty lists count as 1.0.
double repeatability(const ImagePlane& img, const ModelFile& mf,
                     const Perturbation& p, const ProposerConfig& cfg = {},
                     const MergeConfig& merge_cfg = {}, bool merge = true,
                     std::uint64_t seed = 0, int top = 1000,
                     double iou_thr = 0.5);

// Mean wall-clock seconds per image for the full pipeline, file read
// included, run strictly sequentially.
double time_pipeline(const ModelFile& mf, const std::vector<std::string>& image_paths,
                     const ProposerConfig& cfg = {}, const MergeConfig& merge_cfg = {},
                     bool merge = true);

struct EvalReport {
  double detection_rate = 0.0;
  double mabo = 0.0;
  std::vector<std::pair<std::string, double>> per_class_abo;
  double mean_time_s = 0.0;
  double merge_time_share = 0.0;  // merge seconds / total seconds, pooled
  int images = 0;
  double mean_proposals = 0.0;
  int min_proposals = 0;
  int max_proposals = 0;
  double iou_thr = 0.5;
  int budget = 10000;
};

// Runs the full pipeline over a corpus and aggregates every report field.
// Proposal generation parallelizes across images (threads = 0 means hardware
// concurrency); results are collected in input order so the report is
// thread-count invariant. Timing fields are only meaningful at threads = 1.
EvalReport evaluate(const std::vector<ImagePlane>& images,
                    const std::vector<std::vector<AnnotatedBox>>& ground_truth,
                    const ModelFile& mf, const ProposerConfig& cfg = {},
                    const MergeConfig& merge_cfg = {}, bool merge = true,
                    double iou_thr = 0.5, int threads = 0);

void write_report_json(const EvalReport& r, const std::string& path);
void write_report_csv(const EvalReport& r, const std::string& path);

}  // namespace bihl
