#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bihl/hl_feature.hpp"
#include "bihl/image.hpp"

namespace bihl {

// Bit planes of one 8x8 descriptor window. planes[k-1] (k = 1..ng) holds bit
// (8-k) of each of the 64 bytes; within a plane, bit j corresponds to window
// position row*8+col = j. Plane 1 is the most significant bit.
struct BinarizedPatch {
  std::array<std::uint64_t, 8> planes{};
  int ng = 0;
};

// Reconstructed byte value from the retained planes: sum over k of
// 2^(8-k) * bit_k. Always <= the original byte; the truncation error is
// < 2^(8-ng).
int reconstruct_byte(const BinarizedPatch& p, int j);

// Extracts the top `ng` bit planes of the 8x8 window anchored at cell (y, x).
// Throws Error("oob") if the window leaves the map, and Error("config-mismatch")
// for ng outside 1..8.
BinarizedPatch binarize_patch(const HlFeatureMap& map, int y, int x, int ng);

// One term of the signed-binary weight decomposition. `bits` holds the +1
// positions of the sign vector (bit j set means component j is +1, clear
// means -1), bit j = row*8+col as in BinarizedPatch.
struct BasisTerm {
  double lambda = 0.0;
  std::uint64_t bits = 0;
};

// Linear objectness model: the trained 64-dim weight vector and its greedy
// signed-binary approximation w ~ sum_i lambda_i * nu_i used for scoring.
struct BinarizedModel {
  std::array<double, 64> w{};
  std::vector<BasisTerm> basis;  // size na
  int ng = 4;
  int na = 2;
};

// Greedy residual decomposition: repeat na times on residual r (init w):
// nu+ <- indicator(r > 0); lambda <- <r, 2 nu+ - 1> / 64; r <- r - lambda nu.
// The residual L2 norm never increases from one step to the next.
BinarizedModel decompose(const std::array<double, 64>& w, int na, int ng = 4);

// L2 norms of the residual after 0, 1, ..., na steps of the decomposition
// above. Exposed for diagnostics; front entry is |w|.
std::vector<double> decompose_residual_norms(const std::array<double, 64>& w, int na);

// Bitwise score: sum_i lambda_i * sum_k 2^(8-k) *
// (2 popcount(bits_i AND plane_k) - popcount(plane_k)).
// The result equals the dot product of the reconstructed weight vector with
// the reconstructed descriptor. Throws Error("config-mismatch") when
// patch.ng != model.ng.
double score_patch(const BinarizedModel& model, const BinarizedPatch& patch);

// A stored model: the classifier plus the pyramid scales it is applied to and
// an optional per-scale affine score calibration (a, b) -> a*score + b.
struct ModelFile {
  BinarizedModel model;
  std::vector<ScaleSpec> scales;
  std::optional<std::vector<std::array<double, 2>>> calibration;
};

// JSON persistence. Round trips are field-exact (doubles serialized with
// shortest round-trip precision). load_model throws Error("unsupported-version")
// for any version other than 1 and Error("malformed") for structural problems.
void save_model(const ModelFile& mf, const std::string& path);
ModelFile load_model(const std::string& path);

}  // namespace bihl
