#include "bihl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bihl/detail/parallel.hpp"
#include "bihl/error.hpp"
#include "bihl/hl_feature.hpp"
#include "bihl/proposer.hpp"

namespace bihl {

namespace {

// Stable per-image RNG stream: extraction stays deterministic under any
// thread schedule because image i always derives the same seed.
std::uint64_t image_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Lazily built HL maps of one image, shared by the positive and negative
// sampling paths.
struct ScaleMaps {
  const ImagePlane& img;
  std::vector<char> built;
  std::vector<char> feasible;  // admits at least one 8x8 window
  std::vector<HlFeatureMap> maps;

  explicit ScaleMaps(const ImagePlane& image)
      : img(image),
        built(enumerate_scales().size(), 0),
        feasible(enumerate_scales().size(), 0),
        maps(enumerate_scales().size()) {}

  const HlFeatureMap* get(std::size_t si) {
    if (!built[si]) {
      built[si] = 1;
      try {
        const ImagePlane ds = downsample(img, enumerate_scales()[si]);
        if (ds.width >= 2 && ds.height >= 2) {
          HlFeatureMap map = hl_map(ds, enumerate_scales()[si]);
          if (map.width >= 8 && map.height >= 8) {
            maps[si] = std::move(map);
            feasible[si] = 1;
          }
        }
      } catch (const Error&) {
        // scale larger than the image: infeasible
      }
    }
    return feasible[si] ? &maps[si] : nullptr;
  }
};

std::array<std::uint8_t, 64> window_bytes(const HlFeatureMap& map, int y, int x) {
  std::array<std::uint8_t, 64> out{};
  for (int r = 0; r < 8; ++r) {
    const std::uint8_t* row = map.row(y + r) + x;
    std::copy_n(row, 8, out.data() + r * 8);
  }
  return out;
}

std::vector<Sample> extract_image(const TrainingImage& ti, const TrainConfig& cfg,
                                  std::size_t index) {
  std::vector<Sample> out;
  ScaleMaps maps(ti.image);
  const auto& scales = enumerate_scales();

  for (const AnnotatedBox& gt : ti.boxes) {
    const std::optional<ScaleSpec> s = assign_scale(gt.box, cfg.positive_iou);
    if (!s) continue;
    const std::size_t si =
        std::lower_bound(scales.begin(), scales.end(), *s) - scales.begin();
    const HlFeatureMap* map = maps.get(si);
    if (!map) continue;
    const int rows = map->height - 7, cols = map->width - 7;
    // Snap the box center to the nearest window center on this scale's grid:
    // a window at cell (y, x) is centered at 2^m (2y + 8), 2^n (2x + 8).
    const double bcx = gt.box.x + gt.box.w / 2.0;
    const double bcy = gt.box.y + gt.box.h / 2.0;
    const int cx = int(std::clamp<long>(
        std::lround(bcx / double(1 << (s->n + 1)) - 4.0), 0, cols - 1));
    const int cy = int(std::clamp<long>(
        std::lround(bcy / double(1 << (s->m + 1)) - 4.0), 0, rows - 1));
    const Box window = box_of_cell(*s, cy, cx);
    if (iou(window, gt.box) < cfg.positive_iou) continue;
    out.push_back({window_bytes(*map, cy, cx), +1});
  }

  std::vector<std::size_t> feasible;
  for (std::size_t si = 0; si < scales.size(); ++si)
    if (maps.get(si)) feasible.push_back(si);
  if (feasible.empty() || cfg.negatives_per_image <= 0) return out;

  std::mt19937_64 rng(image_seed(cfg.seed, index));
  int want = cfg.negatives_per_image;
  long attempts = 100L * cfg.negatives_per_image;
  while (want > 0 && attempts-- > 0) {
    const std::size_t si = feasible[rng() % feasible.size()];
    const HlFeatureMap* map = maps.get(si);
    const int rows = map->height - 7, cols = map->width - 7;
    const int y = int(rng() % std::uint64_t(rows));
    const int x = int(rng() % std::uint64_t(cols));
    const Box window = box_of_cell(scales[si], y, x);
    bool clear = true;
    for (const AnnotatedBox& gt : ti.boxes)
      if (iou(window, gt.box) >= cfg.negative_iou) {
        clear = false;
        break;
      }
    if (!clear) continue;
    // Only windows that survive the proposer's background filter are worth
    // training against; flat windows never reach the classifier at all.
    const auto bytes = window_bytes(*map, y, x);
    if (*std::max_element(bytes.begin(), bytes.end()) <
        ProposerConfig{}.min_window_max)
      continue;
    out.push_back({bytes, -1});
    --want;
  }
  return out;
}

}  // namespace

std::optional<ScaleSpec> assign_scale(const Box& box, double positive_iou) {
  if (box.w < 1 || box.h < 1) return std::nullopt;
  double best = -1.0;
  ScaleSpec best_scale;
  for (const ScaleSpec& s : enumerate_scales()) {
    const double ww = double(16 << s.n), wh = double(16 << s.m);
    const double inter = std::min(double(box.w), ww) * std::min(double(box.h), wh);
    const double uni = double(box.w) * box.h + ww * wh - inter;
    const double v = inter / uni;
    if (v > best) {  // enumeration is lexicographic, so ties keep the smaller
      best = v;
      best_scale = s;
    }
  }
  if (best < positive_iou) return std::nullopt;
  return best_scale;
}

std::vector<Sample> extract_samples(const std::vector<TrainingImage>& images,
                                    const TrainConfig& cfg) {
  std::vector<std::vector<Sample>> per_image(images.size());
  detail::parallel_for(images.size(), cfg.threads, [&](std::size_t i) {
    per_image[i] = extract_image(images[i], cfg, i);
  });

  std::vector<Sample> out;
  for (std::vector<Sample>& part : per_image)
    out.insert(out.end(), part.begin(), part.end());

  const bool any_positive =
      std::any_of(out.begin(), out.end(), [](const Sample& s) { return s.label > 0; });
  if (!any_positive)
    throw Error("no-positives", "no ground-truth box yielded a usable positive sample");
  return out;
}

std::array<double, 64> train_linear(const std::vector<Sample>& samples,
                                    const TrainConfig& cfg, TrainStats* stats) {
  int npos = 0, nneg = 0;
  for (const Sample& s : samples) (s.label > 0 ? npos : nneg)++;
  if (npos == 0 || nneg == 0)
    throw Error("single-class", "training needs both positive and negative samples");

  const std::size_t n = samples.size();
  std::vector<double> xs(n * 64);  // descriptors normalized to [0, 1]
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < 64; ++j) xs[i * 64 + j] = samples[i].x[j] / 255.0;

  const double lambda = 1.0 / (cfg.c * double(n));
  // Class-balanced sample weights (each class contributes half the mass), so
  // a large negative pool cannot drown the handful of annotated positives.
  const double wpos = double(n) / (2.0 * npos), wneg = double(n) / (2.0 * nneg);
  std::array<double, 64> w{};
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(cfg.seed);

  if (stats) {
    stats->positives = npos;
    stats->negatives = nneg;
    stats->epoch_loss.clear();
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double eta = cfg.learning_rate / (1.0 + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::uint32_t idx : order) {
      const double* x = xs.data() + std::size_t(idx) * 64;
      const double y = samples[idx].label;
      double dot = 0.0;
      for (int j = 0; j < 64; ++j) dot += w[j] * x[j];
      const double shrink = 1.0 - eta * lambda;
      if (y * dot < 1.0) {
        const double step = eta * y * (y > 0 ? wpos : wneg);
        for (int j = 0; j < 64; ++j) w[j] = w[j] * shrink + step * x[j];
      } else {
        for (int j = 0; j < 64; ++j) w[j] *= shrink;
      }
    }
    if (stats) {
      double hinge_sum = 0.0, norm2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = xs.data() + i * 64;
        double dot = 0.0;
        for (int j = 0; j < 64; ++j) dot += w[j] * x[j];
        hinge_sum += (samples[i].label > 0 ? wpos : wneg) *
                     std::max(0.0, 1.0 - samples[i].label * dot);
      }
      for (int j = 0; j < 64; ++j) norm2 += w[j] * w[j];
      stats->epoch_loss.push_back(lambda / 2.0 * norm2 + hinge_sum / double(n));
    }
  }

  // Fold the 1/255 normalization into the weights so deployment scores are
  // taken directly on raw descriptor bytes.
  for (double& wj : w) wj /= 255.0;
  return w;
}

ModelFile train_model(const std::vector<TrainingImage>& images,
                      const TrainConfig& cfg, TrainStats* stats) {
  if (cfg.ng < 1 || cfg.ng > 8)
    throw Error("config-mismatch", "train: ng must be in 1..8");
  if (cfg.na < 1) throw Error("config-mismatch", "train: na must be >= 1");
  const std::vector<Sample> samples = extract_samples(images, cfg);
  const std::array<double, 64> w = train_linear(samples, cfg, stats);
  ModelFile mf;
  mf.model = decompose(w, cfg.na, cfg.ng);
  mf.scales = enumerate_scales();
  return mf;
}

}  // namespace bihl
