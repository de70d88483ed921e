#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "bihl/binarized_model.hpp"
#include "bihl/error.hpp"
#include "bihl/hl_feature.hpp"
#include "doctest.h"

using namespace bihl;
namespace fs = std::filesystem;

namespace {

HlFeatureMap map_from_bytes(const std::vector<std::uint8_t>& bytes, int w, int h) {
  HlFeatureMap m;
  m.width = w;
  m.height = h;
  m.data = bytes;
  return m;
}

// Scalar reading of a bit plane: bit j of plane p corresponds to window
// element (j / 8, j % 8).
int plane_bit(const BinarizedPatch& p, int plane, int row, int col) {
  return int((p.planes[plane] >> (row * 8 + col)) & 1u);
}

std::vector<std::uint8_t> random_bytes(std::mt19937_64& rng, size_t n) {
  std::vector<std::uint8_t> v(n);
  for (auto& b : v) b = std::uint8_t(rng() % 256);
  return v;
}

// Score recomputed with plain per-element arithmetic from first principles:
// reconstruct each window byte from its quantized bits, reconstruct the
// weight vector from the signed basis, take the inner product.
double score_oracle(const BinarizedModel& model, const BinarizedPatch& patch) {
  double total = 0;
  for (int j = 0; j < 64; ++j) {
    double w = 0;
    for (const BasisTerm& t : model.basis)
      w += t.lambda * (((t.bits >> j) & 1u) ? 1.0 : -1.0);
    double byte = 0;
    for (int p = 0; p < patch.ng; ++p)
      byte += double(1u << (7 - p)) * double((patch.planes[p] >> j) & 1u);
    total += w * byte;
  }
  return total;
}

}  // namespace

TEST_CASE("bit plane extraction") {
  SUBCASE("zero window") {
    const auto m = map_from_bytes(std::vector<std::uint8_t>(64, 0), 8, 8);
    const BinarizedPatch p = binarize_patch(m, 0, 0, 4);
    CHECK(p.ng == 4);
    for (int i = 0; i < 4; ++i) CHECK(p.planes[i] == 0);
  }

  SUBCASE("saturated window sets every kept bit") {
    const auto m = map_from_bytes(std::vector<std::uint8_t>(64, 255), 8, 8);
    const BinarizedPatch p = binarize_patch(m, 0, 0, 4);
    for (int i = 0; i < 4; ++i) CHECK(p.planes[i] == ~0ull);
  }

  SUBCASE("value 128 occupies only the top plane") {
    std::vector<std::uint8_t> bytes(64, 0);
    bytes[0] = 128;
    const BinarizedPatch p = binarize_patch(map_from_bytes(bytes, 8, 8), 0, 0, 2);
    CHECK(p.planes[0] == 1ull);  // most significant bit of element (0,0)
    CHECK(p.planes[1] == 0ull);
  }

  SUBCASE("plane p holds bit 7-p of each element") {
    std::mt19937_64 rng(5);
    const auto bytes = random_bytes(rng, 12 * 10);
    const auto m = map_from_bytes(bytes, 12, 10);
    const BinarizedPatch p = binarize_patch(m, 2, 3, 8);
    for (int plane = 0; plane < 8; ++plane)
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
          const int expect = (m.at(2 + r, 3 + c) >> (7 - plane)) & 1;
          CHECK(plane_bit(p, plane, r, c) == expect);
        }
  }

  SUBCASE("window position and depth are validated") {
    const auto m = map_from_bytes(std::vector<std::uint8_t>(64, 0), 8, 8);
    CHECK_THROWS_WITH_AS(binarize_patch(m, 1, 0, 4), doctest::Contains("oob"), Error);
    CHECK_THROWS_WITH_AS(binarize_patch(m, 0, 1, 4), doctest::Contains("oob"), Error);
    CHECK_THROWS_WITH_AS(binarize_patch(m, -1, 0, 4), doctest::Contains("oob"), Error);
    CHECK_THROWS_WITH_AS(binarize_patch(m, 0, 0, 0), doctest::Contains("config-mismatch"),
                         Error);
    CHECK_THROWS_WITH_AS(binarize_patch(m, 0, 0, 9), doctest::Contains("config-mismatch"),
                         Error);
  }
}

TEST_CASE("byte reconstruction error is bounded by the dropped planes") {
  for (int ng = 1; ng <= 8; ++ng) {
    const int bound = 1 << (8 - ng);
    for (int v = 0; v < 256; ++v) {
      std::vector<std::uint8_t> bytes(64, std::uint8_t(v));
      const BinarizedPatch p = binarize_patch(map_from_bytes(bytes, 8, 8), 0, 0, ng);
      const int recon = reconstruct_byte(p, 0);
      CHECK(recon <= v);
      CHECK(v - recon < bound);
    }
  }
}

TEST_CASE("greedy signed decomposition") {
  SUBCASE("uniform weights are captured by one term") {
    std::array<double, 64> w;
    w.fill(1.0);
    const auto& basis = decompose(w, 1).basis;
    REQUIRE(basis.size() == 1);
    CHECK(basis[0].lambda == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(basis[0].bits == ~0ull);
    const auto norms = decompose_residual_norms(w, 1);
    REQUIRE(norms.size() == 2);
    CHECK(norms[0] == doctest::Approx(8.0));
    CHECK(norms[1] == doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("zero weights give zero coefficients") {
    std::array<double, 64> w{};
    for (const auto& t : decompose(w, 3).basis) CHECK(t.lambda == 0.0);
  }

  SUBCASE("an alternating sign vector is exact in one term") {
    std::array<double, 64> w;
    std::uint64_t positives = 0;
    for (int j = 0; j < 64; ++j) {
      w[j] = (j % 2) ? 1.0 : -1.0;
      if (j % 2) positives |= 1ull << j;
    }
    const auto& basis = decompose(w, 2).basis;
    CHECK(basis[0].lambda == doctest::Approx(1.0));
    CHECK(basis[0].bits == positives);
    CHECK(basis[1].lambda == doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("residual norms never increase") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::array<double, 64> w;
      for (auto& x : w) x = gauss(rng);
      const auto norms = decompose_residual_norms(w, 16);
      REQUIRE(norms.size() == 17);
      for (size_t i = 1; i < norms.size(); ++i)
        CHECK(norms[i] <= norms[i - 1] + 1e-12);
    }
  }

  SUBCASE("zero residual entries binarize to -1") {
    std::array<double, 64> w{};
    w[5] = 2.0;
    CHECK(decompose(w, 1).basis[0].bits == (1ull << 5));  // strictly positive only
  }
}

TEST_CASE("bitwise scoring") {
  SUBCASE("zero patch scores zero") {
    BinarizedModel model;
    model.ng = 4;
    model.na = 2;
    model.basis = {{1.5, 0x123456789abcdef0ull}, {-0.25, ~0ull}};
    BinarizedPatch p{};
    p.ng = 4;
    CHECK(score_patch(model, p) == 0.0);
  }

  SUBCASE("uniform model on a saturated patch") {
    // lambda=1, all-positive basis, ng=1: every element reconstructs to 128,
    // so the score is 64 * 128.
    BinarizedModel model;
    model.ng = 1;
    model.na = 1;
    model.basis = {{1.0, ~0ull}};
    BinarizedPatch p{};
    p.ng = 1;
    p.planes[0] = ~0ull;
    CHECK(score_patch(model, p) == doctest::Approx(8192.0));
  }

  SUBCASE("scaling the coefficients scales the score") {
    std::mt19937_64 rng(23);
    BinarizedModel model;
    model.ng = 4;
    model.na = 3;
    for (int i = 0; i < 3; ++i) model.basis.push_back({0.5 - double(i) * 0.37, rng()});
    BinarizedModel doubled = model;
    for (auto& t : doubled.basis) t.lambda *= 2.5;
    for (int trial = 0; trial < 10; ++trial) {
      BinarizedPatch p{};
      p.ng = 4;
      for (int i = 0; i < 4; ++i) p.planes[i] = rng();
      CHECK(score_patch(doubled, p) ==
            doctest::Approx(2.5 * score_patch(model, p)).epsilon(1e-12));
    }
  }

  SUBCASE("popcount evaluation equals scalar arithmetic") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
      BinarizedModel model;
      model.ng = 1 + int(rng() % 8);
      model.na = 1 + int(rng() % 8);
      for (int i = 0; i < model.na; ++i) model.basis.push_back({gauss(rng), rng()});
      BinarizedPatch p{};
      p.ng = model.ng;
      for (int i = 0; i < p.ng; ++i) p.planes[i] = rng();
      const double fast = score_patch(model, p);
      const double slow = score_oracle(model, p);
      CHECK(std::abs(fast - slow) < 1e-9);
    }
  }

  SUBCASE("plane count mismatch is rejected") {
    BinarizedModel model;
    model.ng = 4;
    model.na = 1;
    model.basis = {{1.0, 0ull}};
    BinarizedPatch p{};
    p.ng = 3;
    CHECK_THROWS_WITH_AS(score_patch(model, p), doctest::Contains("config-mismatch"),
                         Error);
  }
}

TEST_CASE("model persistence") {
  const fs::path dir = fs::temp_directory_path() / "bihl_model_tests";
  fs::create_directories(dir);

  SUBCASE("round trip is bit exact") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ModelFile mf;
    mf.model.ng = 5;
    mf.model.na = 4;
    for (auto& w : mf.model.w) w = gauss(rng) * 1e-3;
    for (int i = 0; i < 4; ++i) mf.model.basis.push_back({gauss(rng), rng()});
    mf.scales = enumerate_scales();
    mf.calibration.emplace();
    for (size_t i = 0; i < mf.scales.size(); ++i)
      mf.calibration->push_back({gauss(rng), gauss(rng)});

    const fs::path p = dir / "rt.json";
    save_model(mf, p.string());
    const ModelFile back = load_model(p.string());

    CHECK(back.model.ng == mf.model.ng);
    CHECK(back.model.na == mf.model.na);
    for (int j = 0; j < 64; ++j) CHECK(back.model.w[j] == mf.model.w[j]);
    REQUIRE(back.model.basis.size() == mf.model.basis.size());
    for (size_t i = 0; i < mf.model.basis.size(); ++i) {
      CHECK(back.model.basis[i].lambda == mf.model.basis[i].lambda);
      CHECK(back.model.basis[i].bits == mf.model.basis[i].bits);
    }
    CHECK(back.scales == mf.scales);
    REQUIRE(back.calibration.has_value());
    for (size_t i = 0; i < mf.scales.size(); ++i) {
      CHECK((*back.calibration)[i][0] == (*mf.calibration)[i][0]);
      CHECK((*back.calibration)[i][1] == (*mf.calibration)[i][1]);
    }

    // Absent calibration stays absent.
    mf.calibration.reset();
    save_model(mf, p.string());
    CHECK_FALSE(load_model(p.string()).calibration.has_value());
  }

  SUBCASE("rejects future versions and structural damage") {
    auto write = [&](const char* name, const std::string& text) {
      const fs::path p = dir / name;
      std::ofstream(p) << text;
      return p.string();
    };
    const std::string good =
        R"({"format":"bihl-model","version":1,"ng":4,"na":1,)"
        R"("w":[)" + [] {
          std::string s;
          for (int i = 0; i < 64; ++i) s += (i ? ",0" : "0");
          return s;
        }() + R"(],"basis":[{"lambda":1.0,"bits":"0000000000000000"}],)"
        R"("scales":[[0,0]],"calibration":null})";
    CHECK_NOTHROW(load_model(write("good.json", good)));

    auto swap = [&](const std::string& from, const std::string& to) {
      std::string s = good;
      s.replace(s.find(from), from.size(), to);
      return s;
    };
    CHECK_THROWS_WITH_AS(load_model(write("v2.json", swap("\"version\":1", "\"version\":2"))),
                         doctest::Contains("unsupported-version"), Error);
    CHECK_THROWS_WITH_AS(load_model(write("fmt.json", swap("bihl-model", "other-model"))),
                         doctest::Contains("malformed"), Error);
    CHECK_THROWS_WITH_AS(load_model(write("nb.json", swap("\"basis\":[{\"lambda\":1.0,\"bits\":\"0000000000000000\"}]", "\"basis\":[]"))),
                         doctest::Contains("malformed"), Error);
    CHECK_THROWS_WITH_AS(load_model(write("hex.json", swap("0000000000000000", "zzzz000000000000"))),
                         doctest::Contains("malformed"), Error);
    CHECK_THROWS_WITH_AS(load_model(write("scale.json", swap("[[0,0]]", "[[0,3]]"))),
                         doctest::Contains("malformed"), Error);
    CHECK_THROWS_WITH_AS(load_model(write("trunc.json", good.substr(0, good.size() / 2))),
                         doctest::Contains("malformed"), Error);
    CHECK_THROWS_WITH_AS(load_model((dir / "missing.json").string()),
                         doctest::Contains("io"), Error);
  }
}
