#include "bihl/eval.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <tuple>
#include <unordered_set>

#include "bihl/detail/parallel.hpp"
#include "bihl/error.hpp"
#include "bihl/image_io.hpp"
#include "json.hpp"

namespace bihl {

namespace {

void check_parallel_lists(std::size_t a, std::size_t b) {
  if (a != b)
    throw Error("config-mismatch",
                "per-image lists differ in length: " + std::to_string(a) +
                    " vs " + std::to_string(b));
}

// Best IoU any of the first `budget` proposals achieves against `gt`.
double best_overlap(const std::vector<ScoredBox>& proposals, const Box& gt,
                    int budget) {
  double best = 0.0;
  const std::size_t limit = std::min(proposals.size(), std::size_t(budget));
  for (std::size_t i = 0; i < limit; ++i)
    best = std::max(best, iou(proposals[i].box, gt));
  return best;
}

}  // namespace

double detection_rate(const std::vector<std::vector<ScoredBox>>& proposals,
                      const std::vector<std::vector<AnnotatedBox>>& ground_truth,
                      double iou_thr, int budget) {
  check_parallel_lists(proposals.size(), ground_truth.size());
  long long total = 0, hit = 0;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    for (const AnnotatedBox& gt : ground_truth[i]) {
      ++total;
      if (best_overlap(proposals[i], gt.box, budget) >= iou_thr) ++hit;
    }
  }
  if (total == 0) throw Error("no-gt", "detection_rate: no ground-truth boxes");
  return double(hit) / double(total);
}

MaboResult mabo(const std::vector<std::vector<ScoredBox>>& proposals,
                const std::vector<std::vector<AnnotatedBox>>& ground_truth,
                int budget) {
  check_parallel_lists(proposals.size(), ground_truth.size());
  std::map<std::string, std::pair<double, long long>> acc;  // class -> (sum, count)
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    for (const AnnotatedBox& gt : ground_truth[i]) {
      auto& slot = acc[gt.label];
      slot.first += best_overlap(proposals[i], gt.box, budget);
      slot.second += 1;
    }
  }
  if (acc.empty()) throw Error("no-gt", "mabo: no ground-truth boxes");

  MaboResult r;
  double sum = 0.0;
  for (const auto& [label, v] : acc) {
    const double abo = v.first / double(v.second);
    r.per_class.emplace_back(label, abo);
    sum += abo;
  }
  r.mabo = sum / double(acc.size());
  return r;
}

const std::vector<double>& perturb_ladder(PerturbKind kind) {
  static const std::vector<double> scale{0.5, 0.707, 1.414, 2.0};
  static const std::vector<double> rotate{5.0, 10.0, 15.0};
  static const std::vector<double> gamma{0.5, 0.8, 1.25, 2.0};
  static const std::vector<double> jpeg{50.0, 20.0, 10.0, 5.0};
  static const std::vector<double> blur{0.0, 1.0, 2.0, 4.0, 8.0};
  static const std::vector<double> saltpepper{0.01, 0.03, 0.05, 0.1};
  switch (kind) {
    case PerturbKind::kScale: return scale;
    case PerturbKind::kRotate: return rotate;
    case PerturbKind::kIllumination: return gamma;
    case PerturbKind::kJpeg: return jpeg;
    case PerturbKind::kBlur: return blur;
    case PerturbKind::kSaltPepper: return saltpepper;
  }
  return blur;  // unreachable
}

const char* perturb_kind_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::kScale: return "scale";
    case PerturbKind::kRotate: return "rotate";
    case PerturbKind::kIllumination: return "illumination";
    case PerturbKind::kJpeg: return "jpeg";
    case PerturbKind::kBlur: return "blur";
    case PerturbKind::kSaltPepper: return "saltpepper";
  }
  return "?";
}

AffineMap AffineMap::inverted() const {
  const double det = a * d - b * c;
  AffineMap inv;
  inv.a = d / det;
  inv.b = -b / det;
  inv.c = -c / det;
  inv.d = a / det;
  inv.tx = -(inv.a * tx + inv.b * ty);
  inv.ty = -(inv.c * tx + inv.d * ty);
  return inv;
}

bool AffineMap::is_identity() const {
  return a == 1 && b == 0 && c == 0 && d == 1 && tx == 0 && ty == 0;
}

namespace {

std::uint8_t clamp_round(double v) {
  const long r = std::lround(v);
  return std::uint8_t(r < 0 ? 0 : (r > 255 ? 255 : r));
}

// Bilinear sample with replicated borders; (x, y) are pixel-center
// coordinates in the source frame.
double sample_bilinear(const ImagePlane& img, double x, double y) {
  const double fx = std::clamp(x, 0.0, double(img.width - 1));
  const double fy = std::clamp(y, 0.0, double(img.height - 1));
  const int x0 = int(fx), y0 = int(fy);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double ax = fx - x0, ay = fy - y0;
  const double top = img.px(y0, x0) * (1 - ax) + img.px(y0, x1) * ax;
  const double bot = img.px(y1, x0) * (1 - ax) + img.px(y1, x1) * ax;
  return top * (1 - ay) + bot * ay;
}

ImagePlane resample_affine(const ImagePlane& src, int out_w, int out_h,
                           const AffineMap& to_src) {
  ImagePlane out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    std::uint8_t* row = out.row(y);
    for (int x = 0; x < out_w; ++x) {
      // Map the destination pixel center into the source frame; the affine is
      // defined on edge coordinates, so centers carry the half-pixel offset.
      const auto [sx, sy] = to_src.apply(x + 0.5, y + 0.5);
      row[x] = clamp_round(sample_bilinear(src, sx - 0.5, sy - 0.5));
    }
  }
  return out;
}

ImagePlane gaussian_blur(const ImagePlane& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(std::size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(double(i) * i) / (2.0 * sigma * sigma));
    kernel[std::size_t(i + radius)] = v;
    sum += v;
  }
  for (double& k : kernel) k /= sum;

  const int w = src.width, h = src.height;
  std::vector<double> tmp(std::size_t(w) * h);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = src.row(y);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[std::size_t(i + radius)] * row[std::clamp(x + i, 0, w - 1)];
      tmp[std::size_t(y) * w + x] = acc;
    }
  }
  ImagePlane out(w, h);
  for (int y = 0; y < h; ++y) {
    std::uint8_t* row = out.row(y);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[std::size_t(i + radius)] *
               tmp[std::size_t(std::clamp(y + i, 0, h - 1)) * w + x];
      row[x] = clamp_round(acc);
    }
  }
  return out;
}

}  // namespace

PerturbResult perturb(const ImagePlane& img, const Perturbation& p,
                      std::uint64_t seed) {
  if (img.empty()) throw Error("too-small", "perturb: empty image");
  const std::vector<double>& ladder = perturb_ladder(p.kind);
  if (p.level < 0 || std::size_t(p.level) >= ladder.size())
    throw Error("unsupported-level",
                std::string(perturb_kind_name(p.kind)) + " level must be in 0.." +
                    std::to_string(ladder.size() - 1));
  const double param = ladder[std::size_t(p.level)];

  PerturbResult r;
  switch (p.kind) {
    case PerturbKind::kScale: {
      const int w2 = std::max(1, int(std::lround(img.width * param)));
      const int h2 = std::max(1, int(std::lround(img.height * param)));
      // Exact frame-to-frame ratios so box edges map [0,w2] onto [0,w].
      r.to_original.a = double(img.width) / w2;
      r.to_original.d = double(img.height) / h2;
      r.image = resample_affine(img, w2, h2, r.to_original);
      break;
    }
    case PerturbKind::kRotate: {
      const double theta = param * std::acos(-1.0) / 180.0;
      const double cx = img.width / 2.0, cy = img.height / 2.0;
      // Content rotates by +theta; coordinates map back through R(-theta)
      // about the center. Same output dimensions, replicated borders.
      AffineMap m;
      m.a = std::cos(theta);
      m.b = std::sin(theta);
      m.c = -std::sin(theta);
      m.d = std::cos(theta);
      m.tx = cx - m.a * cx - m.b * cy;
      m.ty = cy - m.c * cx - m.d * cy;
      r.to_original = m;
      r.image = resample_affine(img, img.width, img.height, m);
      break;
    }
    case PerturbKind::kIllumination: {
      std::array<std::uint8_t, 256> lut;
      for (int v = 0; v < 256; ++v)
        lut[std::size_t(v)] = clamp_round(255.0 * std::pow(v / 255.0, param));
      r.image = img;
      for (std::uint8_t& v : r.image.data) v = lut[v];
      break;
    }
    case PerturbKind::kJpeg: {
      r.jpeg_bytes = encode_jpeg(img, int(param));
      r.image = decode_jpeg(r.jpeg_bytes);
      break;
    }
    case PerturbKind::kBlur: {
      r.image = gaussian_blur(img, param);
      break;
    }
    case PerturbKind::kSaltPepper: {
      r.image = img;
      const std::uint64_t npx = std::uint64_t(img.width) * img.height;
      const std::uint64_t k = std::uint64_t(std::llround(param * double(npx)));
      std::mt19937_64 rng(seed ^ 0x5a17a5a17a5a17ull);
      std::unordered_set<std::uint64_t> chosen;
      chosen.reserve(std::size_t(k) * 2);
      while (chosen.size() < k) {
        const std::uint64_t idx = rng() % npx;
        if (!chosen.insert(idx).second) continue;
        r.image.data[std::size_t(idx)] = (rng() & 1u) ? 255 : 0;
      }
      break;
    }
  }
  return r;
}

namespace {

// Double-precision box for projection and matching.
struct DBox {
  double x, y, w, h;
};

DBox project_box(const Box& b, const AffineMap& m) {
  const double xs[2] = {double(b.x), double(b.x2())};
  const double ys[2] = {double(b.y), double(b.y2())};
  double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
  for (double x : xs)
    for (double y : ys) {
      const auto [px, py] = m.apply(x, y);
      minx = std::min(minx, px);
      maxx = std::max(maxx, px);
      miny = std::min(miny, py);
      maxy = std::max(maxy, py);
    }
  return {minx, miny, maxx - minx, maxy - miny};
}

double iou_d(const DBox& a, const DBox& b) {
  const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

bool inside_frame(const DBox& b, double w, double h) {
  const double eps = 1e-6;
  return b.x >= -eps && b.y >= -eps && b.x + b.w <= w + eps && b.y + b.h <= h + eps;
}

}  // namespace

double repeatability(const ImagePlane& img, const ModelFile& mf,
                     const Perturbation& p, const ProposerConfig& cfg,
                     const MergeConfig& merge_cfg, bool merge,
                     std::uint64_t seed, int top, double iou_thr) {
  const PerturbResult pr = perturb(img, p, seed);

  std::vector<ScoredBox> orig = propose(img, mf, cfg, merge_cfg, merge);
  std::vector<ScoredBox> pert = propose(pr.image, mf, cfg, merge_cfg, merge);
  if (int(orig.size()) > top) orig.resize(std::size_t(top));
  if (int(pert.size()) > top) pert.resize(std::size_t(top));

  // Keep only boxes visible in both frames: originals must stay inside the
  // perturbed frame when mapped forward, back-projections inside the original.
  const AffineMap back = pr.to_original;
  const AffineMap fwd = back.inverted();
  std::vector<DBox> a, b;
  for (const ScoredBox& s : orig) {
    const DBox self{double(s.box.x), double(s.box.y), double(s.box.w), double(s.box.h)};
    if (inside_frame(project_box(s.box, fwd), pr.image.width, pr.image.height))
      a.push_back(self);
  }
  for (const ScoredBox& s : pert) {
    const DBox mapped = project_box(s.box, back);
    if (inside_frame(mapped, img.width, img.height)) b.push_back(mapped);
  }

  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;

  struct Pair {
    double v;
    int i, j;
  };
  std::vector<Pair> pairs;
  for (int i = 0; i < int(a.size()); ++i)
    for (int j = 0; j < int(b.size()); ++j) {
      const double v = iou_d(a[std::size_t(i)], b[std::size_t(j)]);
      if (v >= iou_thr) pairs.push_back({v, i, j});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& l, const Pair& r) {
    if (l.v != r.v) return l.v > r.v;
    return std::tie(l.i, l.j) < std::tie(r.i, r.j);
  });

  std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
  long long matched = 0;
  for (const Pair& pr2 : pairs) {
    if (used_a[std::size_t(pr2.i)] || used_b[std::size_t(pr2.j)]) continue;
    used_a[std::size_t(pr2.i)] = used_b[std::size_t(pr2.j)] = 1;
    ++matched;
  }
  return double(matched) / double(std::max(a.size(), b.size()));
}

double time_pipeline(const ModelFile& mf, const std::vector<std::string>& image_paths,
                     const ProposerConfig& cfg, const MergeConfig& merge_cfg,
                     bool merge) {
  if (image_paths.empty()) return 0.0;
  using clock = std::chrono::steady_clock;
  double total = 0.0;
  for (const std::string& path : image_paths) {
    const auto t0 = clock::now();
    const ImagePlane img = load_image(path);
    volatile std::size_t sink = propose(img, mf, cfg, merge_cfg, merge).size();
    (void)sink;
    total += std::chrono::duration<double>(clock::now() - t0).count();
  }
  return total / double(image_paths.size());
}

EvalReport evaluate(const std::vector<ImagePlane>& images,
                    const std::vector<std::vector<AnnotatedBox>>& ground_truth,
                    const ModelFile& mf, const ProposerConfig& cfg,
                    const MergeConfig& merge_cfg, bool merge, double iou_thr,
                    int threads) {
  check_parallel_lists(images.size(), ground_truth.size());
  std::vector<std::vector<ScoredBox>> proposals(images.size());
  std::vector<ProposeTimings> timings(images.size());
  detail::parallel_for(images.size(), threads, [&](std::size_t i) {
    proposals[i] = propose(images[i], mf, cfg, merge_cfg, merge, &timings[i]);
  });

  EvalReport r;
  r.images = int(images.size());
  r.iou_thr = iou_thr;
  r.budget = cfg.budget;
  r.detection_rate = detection_rate(proposals, ground_truth, iou_thr, cfg.budget);
  const MaboResult m = mabo(proposals, ground_truth, cfg.budget);
  r.mabo = m.mabo;
  r.per_class_abo = m.per_class;

  double total_s = 0.0, merge_s = 0.0, count_sum = 0.0;
  int mn = proposals.empty() ? 0 : int(proposals[0].size()), mx = mn;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    total_s += timings[i].total_s;
    merge_s += timings[i].merge_s;
    const int c = int(proposals[i].size());
    count_sum += c;
    mn = std::min(mn, c);
    mx = std::max(mx, c);
  }
  r.mean_time_s = images.empty() ? 0.0 : total_s / double(images.size());
  r.merge_time_share = total_s > 0.0 ? merge_s / total_s : 0.0;
  r.mean_proposals = images.empty() ? 0.0 : count_sum / double(images.size());
  r.min_proposals = mn;
  r.max_proposals = mx;
  return r;
}

void write_report_json(const EvalReport& r, const std::string& path) {
  nlohmann::json j;
  j["detection_rate"] = r.detection_rate;
  j["mabo"] = r.mabo;
  nlohmann::json abo = nlohmann::json::object();
  for (const auto& [label, v] : r.per_class_abo) abo[label] = v;
  j["per_class_abo"] = std::move(abo);
  j["mean_time_s"] = r.mean_time_s;
  j["merge_time_share"] = r.merge_time_share;
  j["images"] = r.images;
  j["mean_proposals"] = r.mean_proposals;
  j["min_proposals"] = r.min_proposals;
  j["max_proposals"] = r.max_proposals;
  j["iou_threshold"] = r.iou_thr;
  j["budget"] = r.budget;
  std::ofstream out(path);
  if (!out) throw Error("io", path + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error("io", path + ": write error");
}

void write_report_csv(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("io", path + ": cannot open for writing");
  out << "metric,value\n";
  out << "detection_rate," << r.detection_rate << "\n";
  out << "mabo," << r.mabo << "\n";
  out << "mean_time_s," << r.mean_time_s << "\n";
  out << "merge_time_share," << r.merge_time_share << "\n";
  out << "images," << r.images << "\n";
  out << "mean_proposals," << r.mean_proposals << "\n";
  out << "min_proposals," << r.min_proposals << "\n";
  out << "max_proposals," << r.max_proposals << "\n";
  out << "iou_threshold," << r.iou_thr << "\n";
  out << "budget," << r.budget << "\n";
  for (const auto& [label, v] : r.per_class_abo)
    out << "abo_" << label << "," << v << "\n";
  if (!out) throw Error("io", path + ": write error");
}

}  // namespace bihl
