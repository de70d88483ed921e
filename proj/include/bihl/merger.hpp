#pragma once

#include <cstdint>
#include <vector>

#include "bihl/boxes.hpp"

namespace bihl {

struct MergeConfig {
  int ts1 = 25;      // max rank difference for fusing a new seed with a neighbor
  int ts2 = 25;      // max rank difference for fusing on a cell collision
  int cell = 8;      // occupancy grid resolution in pixels
  int v_cap = 1100;  // maximum container length fed into the merge
};

// Final occupancy grid, exposed for debugging. owner[cell] is the rank of the
// surviving seed that grew over the cell, or -1 for free cells.
struct SeedGrid {
  int width = 0;
  int height = 0;
  std::vector<int> owner;
};

// Trace of the decisions taken during one merge run, for auditing the
// threshold rules. rank_new is the proposal being placed; rank_existing is
// the current (minimum) rank of the seed it interacted with.
struct MergeEvent {
  enum class Kind {
    kNeighborFuse,     // new seed absorbed into an adjacent seed (|dr| < ts1)
    kNeighborDistinct, // adjacency left both seeds separate (|dr| >= ts1)
    kCollisionFuse,    // landed on an owned cell and fused (|dr| < ts2)
    kCollisionDelete,  // landed on an owned cell and was dropped (|dr| >= ts2)
  };
  Kind kind;
  int rank_new = 0;
  int rank_existing = 0;
};

// Eight-neighborhood seed-growing border merge. Proposals are consumed in
// container order (rank = index, score-descending; the caller sorts and caps
// at cfg.v_cap). Each box projects its center onto the grid:
//   - free cell: the box becomes a seed, claims the cell and its free
//     8-neighbors; meeting an owned neighbor cell fuses the two seeds iff
//     their rank difference is < ts1, else they stay distinct;
//   - owned cell: the box fuses into the owning seed iff the rank difference
//     is < ts2, else the box is deleted.
// Fusion replaces both boxes with the enclosing union, keeps the lower rank
// and the higher score, and pools the claimed cells. Output is the surviving
// seeds, score-descending (ties by rank).
std::vector<ScoredBox> merge_boxes(const std::vector<ScoredBox>& v,
                                   const MergeConfig& cfg, int img_w, int img_h,
                                   SeedGrid* grid_out = nullptr,
                                   std::vector<MergeEvent>* trace = nullptr);

}  // namespace bihl
