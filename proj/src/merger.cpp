#include "bihl/merger.hpp"

#include <algorithm>
#include <numeric>

#include "bihl/error.hpp"

namespace bihl {

namespace {

// Union-find over proposal ranks; each surviving seed is represented by the
// root of its set.
struct SeedForest {
  std::vector<int> parent;

  explicit SeedForest(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
};

struct SeedState {
  Box box;
  double score = 0.0;
  int rank = 0;  // minimum container rank across all fused members
};

}  // namespace

std::vector<ScoredBox> merge_boxes(const std::vector<ScoredBox>& v,
                                   const MergeConfig& cfg, int img_w, int img_h,
                                   SeedGrid* grid_out,
                                   std::vector<MergeEvent>* trace) {
  if (cfg.cell < 1) throw Error("config-mismatch", "merge: cell size must be >= 1");
  if (img_w < 1 || img_h < 1)
    throw Error("too-small", "merge: image dimensions must be positive");

  const int gw = (img_w + cfg.cell - 1) / cfg.cell;
  const int gh = (img_h + cfg.cell - 1) / cfg.cell;
  std::vector<int> owner(std::size_t(gw) * gh, -1);  // proposal rank or free

  const int n = int(v.size());
  SeedForest forest(n);
  std::vector<SeedState> seeds(n);
  std::vector<char> is_seed(n, 0);

  auto fuse = [&](int ra, int rb) {
    // Union two live seed roots; result keeps the enclosing box, the better
    // (minimum) rank, and the higher score. Claimed cells follow via find().
    SeedState merged;
    merged.box = enclosing_union(seeds[ra].box, seeds[rb].box);
    merged.score = std::max(seeds[ra].score, seeds[rb].score);
    merged.rank = std::min(seeds[ra].rank, seeds[rb].rank);
    forest.parent[ra] = rb;
    seeds[rb] = merged;
    return rb;
  };

  for (int idx = 0; idx < n; ++idx) {
    const ScoredBox& p = v[idx];
    const double cx = p.box.x + p.box.w / 2.0;
    const double cy = p.box.y + p.box.h / 2.0;
    int gx = int(cx) / cfg.cell;
    int gy = int(cy) / cfg.cell;
    gx = std::clamp(gx, 0, gw - 1);
    gy = std::clamp(gy, 0, gh - 1);
    int& cell = owner[std::size_t(gy) * gw + gx];

    if (cell < 0) {
      // New seed: claim the projection cell and grow over the free part of
      // its 8-neighborhood; owned neighbors trigger the ts1 fusion test.
      seeds[idx] = {p.box, p.score, idx};
      is_seed[idx] = 1;
      cell = idx;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int ny = gy + dy, nx = gx + dx;
          if (ny < 0 || ny >= gh || nx < 0 || nx >= gw) continue;
          int& ncell = owner[std::size_t(ny) * gw + nx];
          if (ncell < 0) {
            ncell = idx;
            continue;
          }
          const int self = forest.find(idx);
          const int other = forest.find(ncell);
          if (self == other) continue;
          const int dr = std::abs(seeds[self].rank - seeds[other].rank);
          if (dr < cfg.ts1) {
            if (trace)
              trace->push_back({MergeEvent::Kind::kNeighborFuse,
                                seeds[self].rank, seeds[other].rank});
            fuse(self, other);
          } else if (trace) {
            trace->push_back({MergeEvent::Kind::kNeighborDistinct,
                              seeds[self].rank, seeds[other].rank});
          }
        }
      }
    } else {
      // Collision: the cell already belongs to a grown seed.
      const int other = forest.find(cell);
      const int dr = std::abs(idx - seeds[other].rank);
      if (dr < cfg.ts2) {
        if (trace)
          trace->push_back({MergeEvent::Kind::kCollisionFuse, idx,
                            seeds[other].rank});
        seeds[other].box = enclosing_union(seeds[other].box, p.box);
        seeds[other].score = std::max(seeds[other].score, p.score);
        seeds[other].rank = std::min(seeds[other].rank, idx);
      } else {
        if (trace)
          trace->push_back({MergeEvent::Kind::kCollisionDelete, idx,
                            seeds[other].rank});
        // Deleted: the proposal is dropped entirely.
      }
    }
  }

  std::vector<ScoredBox> out;
  for (int idx = 0; idx < n; ++idx) {
    if (!is_seed[idx] || forest.find(idx) != idx) continue;
    out.push_back({seeds[idx].box, seeds[idx].score, v[seeds[idx].rank].scale});
  }
  std::sort(out.begin(), out.end(), [](const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.box.y, a.box.x, a.box.w, a.box.h) <
           std::tie(b.box.y, b.box.x, b.box.w, b.box.h);
  });

  if (grid_out) {
    grid_out->width = gw;
    grid_out->height = gh;
    grid_out->owner.assign(owner.begin(), owner.end());
    for (int& o : grid_out->owner)
      if (o >= 0) o = seeds[forest.find(o)].rank;
  }
  return out;
}

}  // namespace bihl
