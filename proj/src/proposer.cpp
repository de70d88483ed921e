#include "bihl/proposer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <tuple>
#include <unordered_map>

#include "bihl/error.hpp"

namespace bihl {

namespace {

// Sliding maximum with window 8 along each row, then along each column, via
// three max-doubling passes per direction (8 = 2^3). out(y, x) becomes the
// max over the 8x8 block anchored at (y, x).
std::vector<std::uint8_t> window8_max(const HlFeatureMap& map, int rows, int cols) {
  const int w = map.width, h = map.height;
  std::vector<std::uint8_t> a(map.data), b(std::size_t(w) * h);
  for (int span = 1; span <= 4; span *= 2) {
    for (int y = 0; y < h; ++y) {
      const std::uint8_t* src = a.data() + std::size_t(y) * w;
      std::uint8_t* dst = b.data() + std::size_t(y) * w;
      const int run = w - span;
      for (int x = 0; x < run; ++x) dst[x] = std::max(src[x], src[x + span]);
      for (int x = std::max(0, run); x < w; ++x) dst[x] = src[x];
    }
    std::swap(a, b);
  }
  for (int span = 1; span <= 4; span *= 2) {
    for (int y = 0; y < h; ++y) {
      const std::uint8_t* src = a.data() + std::size_t(y) * w;
      const std::uint8_t* src2 =
          a.data() + std::size_t(std::min(y + span, h - 1)) * w;
      if (y + span >= h) src2 = src;
      std::uint8_t* dst = b.data() + std::size_t(y) * w;
      for (int x = 0; x < w; ++x) dst[x] = std::max(src[x], src2[x]);
    }
    std::swap(a, b);
  }
  std::vector<std::uint8_t> out(std::size_t(rows) * cols);
  for (int y = 0; y < rows; ++y)
    std::copy_n(a.data() + std::size_t(y) * w, cols,
                out.data() + std::size_t(y) * cols);
  return out;
}

// Floor division for possibly negative coordinates.
inline int floor_div(int a, int b) {
  int q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

}  // namespace

ScoreMatrix score_scale(const ImagePlane& img, const ScaleSpec& s,
                        const BinarizedModel& model, const ProposerConfig& cfg) {
  ScoreMatrix out;
  out.scale = s;

  ImagePlane ds;
  try {
    ds = downsample(img, s);
  } catch (const Error&) {
    return out;  // scale exceeds the image: no windows, not an error
  }
  if (ds.width < 2 || ds.height < 2) return out;
  const HlFeatureMap map = hl_map(ds, s);
  if (map.height < 8 || map.width < 8) return out;

  out.rows = map.height - 7;
  out.cols = map.width - 7;
  out.scores.assign(std::size_t(out.rows) * out.cols, ScoreMatrix::kFiltered);

  const std::vector<std::uint8_t> wmax = window8_max(map, out.rows, out.cols);

  // Per-plane sliding row bytes: rowbits[k][y * cols + x] packs bit (8-k-1+1)
  // of map(y, x..x+7) with bit c = column offset c. A window word is then the
  // OR of its eight row bytes shifted into place.
  const int ng = model.ng;
  std::vector<std::vector<std::uint8_t>> rowbits(
      ng, std::vector<std::uint8_t>(std::size_t(map.height) * out.cols));
  for (int k = 0; k < ng; ++k) {
    const int shift = 7 - k;  // plane k+1 holds bit (8-(k+1)) = 7-k
    for (int y = 0; y < map.height; ++y) {
      const std::uint8_t* src = map.row(y);
      std::uint8_t* dst = rowbits[k].data() + std::size_t(y) * out.cols;
      unsigned byte = 0;
      for (int x = 0; x < 8; ++x)
        byte |= ((src[x] >> shift) & 1u) << x;
      dst[0] = std::uint8_t(byte);
      for (int x = 1; x < out.cols; ++x) {
        byte = (byte >> 1) | (((src[x + 7] >> shift) & 1u) << 7);
        dst[x] = std::uint8_t(byte);
      }
    }
  }

  // Slide down each column: dropping the top row byte and shifting in the
  // next is two operations per plane, against eight gathers per window when
  // rebuilt from scratch. The words are maintained even across filtered
  // windows so the slide never restarts.
  const int na = int(model.basis.size());
  const int cols = out.cols;
  for (int x = 0; x < cols; ++x) {
    // Rows 0..6 parked one byte high: the first slide drops them into
    // place as it pulls in row 7.
    std::uint64_t planes[8] = {};
    for (int k = 0; k < ng; ++k) {
      const std::uint8_t* rb = rowbits[k].data() + x;
      std::uint64_t word = 0;
      for (int wr = 0; wr < 7; ++wr)
        word |= std::uint64_t(rb[std::size_t(wr) * cols]) << (8 * (wr + 1));
      planes[k] = word;
    }
    for (int y = 0; y < out.rows; ++y) {
      for (int k = 0; k < ng; ++k)
        planes[k] = (planes[k] >> 8) |
                    (std::uint64_t(
                         rowbits[k][std::size_t(y + 7) * cols + x])
                     << 56);
      if (wmax[std::size_t(y) * cols + x] < cfg.min_window_max)
        continue;  // background filter
      double score = 0.0;
      for (int i = 0; i < na; ++i) {
        const std::uint64_t bits = model.basis[i].bits;
        long long inner = 0;
        for (int k = 0; k < ng; ++k) {
          const std::uint64_t b = planes[k];
          inner += static_cast<long long>(2 * std::popcount(bits & b) -
                                          std::popcount(b))
                   << (7 - k);
        }
        score += model.basis[i].lambda * double(inner);
      }
      out.scores[std::size_t(y) * cols + x] = score;
    }
  }
  return out;
}

Box box_of_cell(const ScaleSpec& s, int y, int x, int img_w, int img_h) {
  Box b{(2 * x) << s.n, (2 * y) << s.m, 16 << s.n, 16 << s.m};
  if (img_w > 0 && img_h > 0) {
    b.w = std::max(0, std::min(b.w, img_w - b.x));
    b.h = std::max(0, std::min(b.h, img_h - b.y));
  }
  return b;
}

namespace {

bool proposal_order(const ScoredBox& a, const ScoredBox& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.scale.m, a.scale.n, a.box.y, a.box.x, a.box.w, a.box.h) <
         std::tie(b.scale.m, b.scale.n, b.box.y, b.box.x, b.box.w, b.box.h);
}

// Open-addressed map from a packed cell key to the head of an intrusive
// index chain. One shared table avoids the per-node allocations of
// std::unordered_map on the hot suppression path.
struct CellTable {
  static constexpr std::uint64_t kEmpty = ~std::uint64_t(0);
  std::vector<std::uint64_t> keys;
  std::vector<int> heads;
  std::size_t used = 0, mask = 0;

  explicit CellTable(std::size_t cap = 4096) { rehash(cap); }

  static std::size_t mix(std::uint64_t k) {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 29;
    return std::size_t(k);
  }

  void rehash(std::size_t cap) {
    std::vector<std::uint64_t> ok(std::move(keys));
    std::vector<int> oh(std::move(heads));
    keys.assign(cap, kEmpty);
    heads.assign(cap, -1);
    mask = cap - 1;
    for (std::size_t i = 0; i < ok.size(); ++i) {
      if (ok[i] == kEmpty) continue;
      std::size_t s = mix(ok[i]) & mask;
      while (keys[s] != kEmpty) s = (s + 1) & mask;
      keys[s] = ok[i];
      heads[s] = oh[i];
    }
  }

  // Returns the chain head for the key, or -1.
  int find(std::uint64_t key) const {
    for (std::size_t s = mix(key) & mask;; s = (s + 1) & mask) {
      if (keys[s] == key) return heads[s];
      if (keys[s] == kEmpty) return -1;
    }
  }

  // Returns the previous head so the caller can link the chain.
  int push(std::uint64_t key, int idx) {
    if (2 * (used + 1) > keys.size()) rehash(2 * keys.size());
    std::size_t s = mix(key) & mask;
    while (keys[s] != kEmpty && keys[s] != key) s = (s + 1) & mask;
    if (keys[s] == kEmpty) {
      keys[s] = key;
      ++used;
    }
    const int prev = heads[s];
    heads[s] = idx;
    return prev;
  }
};

// Kept boxes grouped by exact (w, h) and hashed on a per-group grid of
// cells. Overlap above t forces the centers close together: the
// intersection exceeds t/(1+t) of the combined area, so along x
//
//   |cx1 - cx2| < (w1 + w2) / 2 - t (A1 + A2) / ((1 + t) min(h1, h2))
//
// and symmetrically in y. For two boxes of the group's own size that
// reach is w (1 - t) / (1 + t) — about w/15 at the default 7/8 — and the
// cells are sized to it, so a 3x3 neighborhood suffices and stays empty
// on typical stride-2 proposal grids: nearly every probe is a hash miss
// that costs no box fetch. Queries against a group of another size widen
// the neighborhood to the pair bound above, plus half a pixel for the
// rounding of odd-extent centers.
struct NmsIndex {
  struct Group {
    int w, h;
    int sx, sy;  // cell size per axis, >= 1
    long long area;
    // Groups whose boxes could overlap this group's beyond the threshold;
    // a pure size property, so it is wired up once at group creation. On a
    // scale-grid container this is almost always just the group itself.
    std::vector<int> compat;
  };
  std::vector<Group> groups;
  std::unordered_map<std::uint64_t, int> group_of_size;
  CellTable cells;
  std::vector<int> next;  // chains kept-box indices per cell

  static std::uint64_t size_key(int w, int h) {
    return (std::uint64_t(std::uint32_t(w)) << 32) | std::uint32_t(h);
  }
  // Group id and cell coordinates in one key; cell coordinates are small
  // (image extent over cell size) so 24 bits each cannot wrap in practice.
  static std::uint64_t cell_key(int group, int gx, int gy) {
    return (std::uint64_t(std::uint32_t(group)) << 48) |
           (std::uint64_t(std::uint32_t(gx) & 0xffffffu) << 24) |
           std::uint64_t(std::uint32_t(gy) & 0xffffffu);
  }

  // Same-size centers differ by whole pixels, so offsets of at most
  // ceil(bound) - 1 can fire and one cell of that size covers them.
  static int cell_size(int extent, double thr) {
    const double bound = double(extent) * (1.0 - thr) / (1.0 + thr);
    return std::max(1, int(std::ceil(bound)) - 1);
  }

  // Max achievable intersection between the two sizes; IoU <= inter/maxA.
  static bool sizes_compatible(const Group& a, const Group& b, double thr) {
    const long long max_inter =
        (long long)std::min(a.w, b.w) * std::min(a.h, b.h);
    const long long max_area = std::max(a.area, b.area);
    return double(max_inter) > thr * double(max_area);
  }

  // Id of the group for this exact size, created (and cross-wired into the
  // compatibility lists) on first sight.
  int group_for(const Box& b, double thr) {
    const auto [it, fresh] =
        group_of_size.try_emplace(size_key(b.w, b.h), int(groups.size()));
    if (fresh) {
      Group g{b.w, b.h, cell_size(b.w, thr), cell_size(b.h, thr), b.area(), {}};
      const int id = int(groups.size());
      for (int gi = 0; gi < id; ++gi)
        if (sizes_compatible(g, groups[std::size_t(gi)], thr)) {
          g.compat.push_back(gi);
          groups[std::size_t(gi)].compat.push_back(id);
        }
      if (sizes_compatible(g, g, thr)) g.compat.push_back(id);
      groups.push_back(std::move(g));
    }
    return it->second;
  }

  bool suppressed(const ScoredBox& c, int gid,
                  const std::vector<ScoredBox>& kept, double thr) const {
    const Group& own = groups[std::size_t(gid)];
    const int cx = c.box.x + c.box.w / 2, cy = c.box.y + c.box.h / 2;
    for (const int gi : own.compat) {
      const Group& g = groups[std::size_t(gi)];
      int rx = 1, ry = 1;
      if (gi != gid) {
        const double scaled =
            thr * double(own.area + g.area) / (1.0 + thr);
        const double bx = 0.5 * (c.box.w + g.w) - scaled / std::min(c.box.h, g.h);
        const double by = 0.5 * (c.box.h + g.h) - scaled / std::min(c.box.w, g.w);
        if (bx <= 0.0 || by <= 0.0) continue;
        rx = int((bx + 0.5) / g.sx) + 1;
        ry = int((by + 0.5) / g.sy) + 1;
      }
      const int gx = floor_div(cx, g.sx), gy = floor_div(cy, g.sy);
      for (int dy = -ry; dy <= ry; ++dy)
        for (int dx = -rx; dx <= rx; ++dx) {
          for (int idx = cells.find(cell_key(gi, gx + dx, gy + dy));
               idx >= 0; idx = next[std::size_t(idx)])
            if (iou(c.box, kept[idx].box) > thr) return true;
        }
    }
    return false;
  }

  void insert(const ScoredBox& c, int gid, int idx) {
    const Group& g = groups[std::size_t(gid)];
    const int gx = floor_div(c.box.x + c.box.w / 2, g.sx);
    const int gy = floor_div(c.box.y + c.box.h / 2, g.sy);
    if (int(next.size()) <= idx) next.resize(std::size_t(idx) + 1);
    next[std::size_t(idx)] = cells.push(cell_key(gid, gx, gy), idx);
  }
};

}  // namespace

std::vector<ScoredBox> nms(std::vector<ScoredBox> boxes, const ProposerConfig& cfg) {
  std::erase_if(boxes, [&](const ScoredBox& b) {
    // The negated form also drops NaN scores, which would otherwise poison
    // the sort order below.
    return !(b.score >= cfg.min_score) || b.box.w <= 0 || b.box.h <= 0;
  });

  // Sort through packed keys: descending score becomes one ascending
  // unsigned compare, and the field-by-field tiebreak only runs on exact
  // score ties. Cheaper than moving 40-byte records through std::sort.
  std::vector<std::pair<std::uint64_t, std::uint32_t>> order(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double d = boxes[i].score + 0.0;  // folds -0 into +0
    std::uint64_t u = std::bit_cast<std::uint64_t>(d);
    u = (u >> 63) ? ~u : (u | (std::uint64_t(1) << 63));
    order[i] = {~u, std::uint32_t(i)};
  }
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return proposal_order(boxes[a.second], boxes[b.second]);
  });
  {
    std::vector<ScoredBox> sorted;
    sorted.reserve(boxes.size());
    for (const auto& [key, i] : order) sorted.push_back(boxes[i]);
    boxes = std::move(sorted);
  }

  std::vector<ScoredBox> kept;
  kept.reserve(boxes.size());
  NmsIndex index;
  for (const ScoredBox& c : boxes) {
    const int gid = index.group_for(c.box, cfg.nms_iou);
    if (index.suppressed(c, gid, kept, cfg.nms_iou)) continue;
    index.insert(c, gid, int(kept.size()));
    kept.push_back(c);
  }

  // Container cap, applied per scale over the score-ordered survivors. The
  // usual scale exponents fit a small table; anything exotic goes through
  // the map.
  std::array<int, 64> counts{};
  std::unordered_map<std::uint64_t, int> overflow;
  std::vector<ScoredBox> out;
  out.reserve(kept.size());
  for (const ScoredBox& b : kept) {
    int& count = (unsigned(b.scale.m) < 8 && unsigned(b.scale.n) < 8)
                     ? counts[std::size_t(b.scale.m) * 8 + b.scale.n]
                     : overflow[NmsIndex::size_key(b.scale.m, b.scale.n)];
    if (count >= cfg.per_scale_cap) continue;
    ++count;
    out.push_back(b);
  }
  return out;
}

std::vector<ScoredBox> propose(const ImagePlane& img, const ModelFile& mf,
                               const ProposerConfig& cfg,
                               const MergeConfig& merge_cfg, bool merge,
                               ProposeTimings* timings) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();

  const std::vector<ScaleSpec>& scales =
      mf.scales.empty() ? enumerate_scales() : mf.scales;

  std::vector<ScoredBox> candidates;
  for (std::size_t si = 0; si < scales.size(); ++si) {
    const ScaleSpec s = scales[si];
    const ScoreMatrix sm = score_scale(img, s, mf.model, cfg);
    double a = 1.0, b = 0.0;
    if (mf.calibration && si < mf.calibration->size()) {
      a = (*mf.calibration)[si][0];
      b = (*mf.calibration)[si][1];
    }
    for (int y = 0; y < sm.rows; ++y) {
      const double* sc = sm.scores.data() + std::size_t(y) * sm.cols;
      for (int x = 0; x < sm.cols; ++x) {
        const double score = a * sc[x] + b;
        if (!(score >= cfg.min_score)) continue;  // drops -inf and NaN too
        candidates.push_back(
            {box_of_cell(s, y, x, img.width, img.height), score, s});
      }
    }
  }

  std::vector<ScoredBox> v = nms(std::move(candidates), cfg);

  double merge_s = 0.0;
  if (merge && !v.empty()) {
    const auto m0 = clock::now();
    const std::size_t head = std::min(v.size(), std::size_t(merge_cfg.v_cap));
    std::vector<ScoredBox> capped(v.begin(), v.begin() + head);
    std::vector<ScoredBox> merged =
        merge_boxes(capped, merge_cfg, img.width, img.height);
    merged.insert(merged.end(), v.begin() + head, v.end());
    v = std::move(merged);
    merge_s = std::chrono::duration<double>(clock::now() - m0).count();
  }

  if (int(v.size()) > cfg.budget) v.resize(std::size_t(cfg.budget));

  if (timings) {
    timings->total_s = std::chrono::duration<double>(clock::now() - t0).count();
    timings->merge_s = merge_s;
  }
  return v;
}

}  // namespace bihl
