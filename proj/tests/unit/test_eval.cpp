#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bihl/binarized_model.hpp"
#include "bihl/error.hpp"
#include "bihl/eval.hpp"
#include "bihl/image_io.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;
using bihl::AnnotatedBox;
using bihl::Box;
using bihl::ImagePlane;
using bihl::ModelFile;
using bihl::Perturbation;
using bihl::PerturbKind;
using bihl::ScoredBox;

namespace {

std::vector<AnnotatedBox> gt_list(std::initializer_list<std::pair<Box, const char*>> items) {
  std::vector<AnnotatedBox> out;
  for (const auto& [box, label] : items) {
    AnnotatedBox a;
    a.box = box;
    a.label = label;
    out.push_back(std::move(a));
  }
  return out;
}

// A scoreless stand-in model: uniform positive weights rank any textured
// window above the threshold, which is all these tests need.
ModelFile ones_model() {
  std::array<double, 64> w;
  w.fill(1.0);
  ModelFile mf;
  mf.model = bihl::decompose(w, 2, 4);
  mf.scales = bihl::enumerate_scales();
  return mf;
}

ImagePlane striped_scene(std::uint8_t lo, std::uint8_t hi) {
  ImagePlane img(128, 128, lo);
  for (int y = 48; y < 80; ++y)
    for (int x = 32; x < 64; ++x)
      img.px(y, x) = (((x - 32) >> 1) & 1) ? hi : lo;
  return img;
}

double mean_abs_err(const ImagePlane& a, const ImagePlane& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    sum += std::abs(int(a.data[i]) - int(b.data[i]));
  return sum / double(a.data.size());
}

}  // namespace

TEST_CASE("eval: detection rate and best-overlap averages") {
  // One proposal, two classes of ground truth in one image.
  const std::vector<std::vector<ScoredBox>> proposals{
      {{Box{0, 0, 10, 10}, 1.0, {0, 0}}}};
  const std::vector<std::vector<AnnotatedBox>> gt{
      gt_list({{Box{0, 0, 10, 8}, "a"}, {Box{0, 0, 10, 6}, "b"}})};

  CHECK(bihl::detection_rate(proposals, gt, 0.5, 10) == doctest::Approx(1.0));
  CHECK(bihl::detection_rate(proposals, gt, 0.7, 10) == doctest::Approx(0.5));
  CHECK(bihl::detection_rate(proposals, gt, 0.85, 10) == doctest::Approx(0.0));

  const bihl::MaboResult m = bihl::mabo(proposals, gt, 10);
  CHECK(m.mabo == doctest::Approx(0.7));
  REQUIRE(m.per_class.size() == 2);
  CHECK(m.per_class[0].first == "a");
  CHECK(m.per_class[0].second == doctest::Approx(0.8));
  CHECK(m.per_class[1].first == "b");
  CHECK(m.per_class[1].second == doctest::Approx(0.6));
}

TEST_CASE("eval: the budget is a prefix of the container") {
  const std::vector<std::vector<ScoredBox>> proposals{
      {{Box{100, 100, 16, 16}, 2.0, {0, 0}}, {Box{0, 0, 16, 16}, 1.0, {0, 0}}}};
  const std::vector<std::vector<AnnotatedBox>> gt{
      gt_list({{Box{0, 0, 16, 16}, "a"}})};
  CHECK(bihl::detection_rate(proposals, gt, 0.5, 1) == doctest::Approx(0.0));
  CHECK(bihl::detection_rate(proposals, gt, 0.5, 2) == doctest::Approx(1.0));
  CHECK(bihl::mabo(proposals, gt, 1).mabo == doctest::Approx(0.0));
  CHECK(bihl::mabo(proposals, gt, 2).mabo == doctest::Approx(1.0));
}

TEST_CASE("eval: metric error cases") {
  const std::vector<std::vector<ScoredBox>> proposals{{}};
  SUBCASE("no ground truth anywhere") {
    const std::vector<std::vector<AnnotatedBox>> gt{{}};
    try {
      bihl::detection_rate(proposals, gt, 0.5, 10);
      FAIL("expected an error");
    } catch (const bihl::Error& e) {
      CHECK(std::string(e.code()) == "no-gt");
    }
    CHECK_THROWS_AS(bihl::mabo(proposals, gt, 10), bihl::Error);
  }
  SUBCASE("length mismatch") {
    const std::vector<std::vector<AnnotatedBox>> gt;
    try {
      bihl::detection_rate(proposals, gt, 0.5, 10);
      FAIL("expected an error");
    } catch (const bihl::Error& e) {
      CHECK(std::string(e.code()) == "config-mismatch");
    }
  }
}

TEST_CASE("eval: perturbation ladders and identity levels") {
  const ImagePlane img = striped_scene(88, 168);

  SUBCASE("blur level 0 is the identity") {
    const auto r = bihl::perturb(img, {PerturbKind::kBlur, 0});
    CHECK(r.image == img);
    CHECK(r.to_original.is_identity());
  }
  SUBCASE("blur level 2 smooths but keeps the frame") {
    const auto r = bihl::perturb(img, {PerturbKind::kBlur, 2});
    CHECK(r.image.width == img.width);
    CHECK(r.image.height == img.height);
    CHECK(r.to_original.is_identity());
    CHECK_FALSE(r.image == img);
  }
  SUBCASE("level outside the ladder") {
    try {
      bihl::perturb(img, {PerturbKind::kBlur, 5});
      FAIL("expected an error");
    } catch (const bihl::Error& e) {
      CHECK(std::string(e.code()) == "unsupported-level");
    }
    CHECK_THROWS_AS(bihl::perturb(img, {PerturbKind::kRotate, -1}), bihl::Error);
  }
}

TEST_CASE("eval: geometric perturbations carry exact frame maps") {
  ImagePlane img(40, 30);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) img.px(y, x) = std::uint8_t((x * 5 + y * 3) % 256);

  SUBCASE("upscale doubles the frame and halves coordinates") {
    const auto r = bihl::perturb(img, {PerturbKind::kScale, 3});  // factor 2
    CHECK(r.image.width == 80);
    CHECK(r.image.height == 60);
    const auto [ox, oy] = r.to_original.apply(80, 60);
    CHECK(ox == doctest::Approx(40.0));
    CHECK(oy == doctest::Approx(30.0));
    CHECK_FALSE(r.to_original.is_identity());
  }
  SUBCASE("downscale halves the frame") {
    const auto r = bihl::perturb(img, {PerturbKind::kScale, 0});  // factor 0.5
    CHECK(r.image.width == 20);
    CHECK(r.image.height == 15);
    const auto [ox, oy] = r.to_original.apply(10, 5);
    CHECK(ox == doctest::Approx(20.0));
    CHECK(oy == doctest::Approx(10.0));
  }
  SUBCASE("rotation keeps the frame and round-trips corners") {
    const auto r = bihl::perturb(img, {PerturbKind::kRotate, 1});  // 10 degrees
    CHECK(r.image.width == 40);
    CHECK(r.image.height == 30);
    CHECK_FALSE(r.to_original.is_identity());
    const bihl::AffineMap fwd = r.to_original.inverted();
    for (const auto& [x, y] : std::vector<std::pair<double, double>>{
             {0, 0}, {40, 0}, {0, 30}, {40, 30}, {13.5, 7.25}}) {
      const auto [ox, oy] = r.to_original.apply(x, y);
      const auto [bx, by] = fwd.apply(ox, oy);
      CHECK(bx == doctest::Approx(x).epsilon(1e-9));
      CHECK(by == doctest::Approx(y).epsilon(1e-9));
    }
  }
}

TEST_CASE("eval: photometric perturbation values") {
  SUBCASE("gamma curve endpoints and midpoint") {
    ImagePlane img(3, 1);
    img.data = {0, 128, 255};
    const auto dark = bihl::perturb(img, {PerturbKind::kIllumination, 3});  // gamma 2
    CHECK(dark.image.data[0] == 0);
    CHECK(dark.image.data[1] == 64);
    CHECK(dark.image.data[2] == 255);
    const auto bright = bihl::perturb(img, {PerturbKind::kIllumination, 0});  // gamma 0.5
    CHECK(bright.image.data[1] == 181);
    CHECK(bright.image.data[0] == 0);
    CHECK(bright.image.data[2] == 255);
  }
  SUBCASE("salt & pepper flips an exact pixel count") {
    const ImagePlane img(100, 80, 128);
    for (int level : {0, 3}) {
      const auto r = bihl::perturb(img, {PerturbKind::kSaltPepper, level}, 42);
      const int expect = level == 0 ? 80 : 800;  // fractions 0.01 and 0.1
      int changed = 0;
      for (std::size_t i = 0; i < img.data.size(); ++i)
        if (r.image.data[i] != img.data[i]) {
          ++changed;
          CHECK((r.image.data[i] == 0 || r.image.data[i] == 255));
        }
      CHECK(changed == expect);
      // Same seed, same pixels.
      const auto r2 = bihl::perturb(img, {PerturbKind::kSaltPepper, level}, 42);
      CHECK(r2.image == r.image);
    }
  }
  SUBCASE("jpeg quality ladder degrades monotonically here") {
    ImagePlane img(64, 48);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 64; ++x) img.px(y, x) = std::uint8_t(x * 2 + y);
    const auto mild = bihl::perturb(img, {PerturbKind::kJpeg, 0});   // quality 50
    const auto harsh = bihl::perturb(img, {PerturbKind::kJpeg, 3});  // quality 5
    REQUIRE(mild.jpeg_bytes.size() > 2);
    CHECK(mild.jpeg_bytes[0] == 0xff);
    CHECK(mild.jpeg_bytes[1] == 0xd8);
    CHECK(mean_abs_err(harsh.image, img) >= mean_abs_err(mild.image, img));
    CHECK(mild.to_original.is_identity());
  }
}

TEST_CASE("eval: repeatability is exactly 1 under the identity") {
  const ImagePlane img = striped_scene(88, 168);
  const ModelFile mf = ones_model();
  // Blur level 0 leaves the image untouched, so both proposal sets coincide.
  CHECK(bihl::repeatability(img, mf, {PerturbKind::kBlur, 0}) == 1.0);
}

TEST_CASE("eval: repeatability collapses when contrast dies") {
  // Stripes at values 0/20 respond just above the window-max filter; gamma 2
  // crushes 20 to 2, below it, so the perturbed image yields no proposals.
  const ImagePlane img = striped_scene(0, 20);
  const ModelFile mf = ones_model();
  const auto baseline = bihl::propose(img, mf);
  REQUIRE(!baseline.empty());
  CHECK(bihl::repeatability(img, mf, {PerturbKind::kIllumination, 3}) == 0.0);
}

TEST_CASE("eval: corpus evaluation is thread-count invariant") {
  const auto scenes = synth::make_corpus(11, 4);
  std::vector<ImagePlane> images;
  std::vector<std::vector<AnnotatedBox>> gt;
  for (const auto& s : scenes) {
    images.push_back(s.image);
    gt.push_back(s.boxes);
  }
  const ModelFile mf = ones_model();

  const bihl::EvalReport r1 = bihl::evaluate(images, gt, mf, {}, {}, true, 0.5, 1);
  const bihl::EvalReport r2 = bihl::evaluate(images, gt, mf, {}, {}, true, 0.5, 3);

  CHECK(r1.images == 4);
  CHECK(r1.detection_rate >= 0.0);
  CHECK(r1.detection_rate <= 1.0);
  CHECK(r1.mabo >= 0.0);
  CHECK(r1.mean_proposals > 0.0);
  CHECK(r1.min_proposals <= r1.max_proposals);

  CHECK(r2.detection_rate == r1.detection_rate);
  CHECK(r2.mabo == r1.mabo);
  CHECK(r2.per_class_abo == r1.per_class_abo);
  CHECK(r2.mean_proposals == r1.mean_proposals);
  CHECK(r2.min_proposals == r1.min_proposals);
  CHECK(r2.max_proposals == r1.max_proposals);

  SUBCASE("report files") {
    const fs::path dir = fs::temp_directory_path() / "bihl_eval_tests";
    fs::create_directories(dir);
    const std::string jpath = (dir / "report.json").string();
    const std::string cpath = (dir / "report.csv").string();
    bihl::write_report_json(r1, jpath);
    bihl::write_report_csv(r1, cpath);

    std::ifstream jin(jpath);
    std::string js((std::istreambuf_iterator<char>(jin)),
                   std::istreambuf_iterator<char>());
    CHECK(js.find("\"detection_rate\"") != std::string::npos);
    CHECK(js.find("\"mabo\"") != std::string::npos);
    CHECK(js.find("\"per_class_abo\"") != std::string::npos);

    // Long-format CSV: one metric per row under a metric,value header.
    std::ifstream cin_(cpath);
    std::string header;
    REQUIRE(bool(std::getline(cin_, header)));
    CHECK(header == "metric,value");
    bool saw_dr = false, saw_mabo = false;
    for (std::string row; std::getline(cin_, row);) {
      if (row.rfind("detection_rate,", 0) == 0) saw_dr = true;
      if (row.rfind("mabo,", 0) == 0) saw_mabo = true;
    }
    CHECK(saw_dr);
    CHECK(saw_mabo);
  }
}

TEST_CASE("eval: pipeline timing averages over real files") {
  const fs::path dir = fs::temp_directory_path() / "bihl_eval_tests";
  fs::create_directories(dir);
  const auto scenes = synth::make_corpus(12, 1, 256, 192);
  const std::string path = (dir / "timing.pgm").string();
  bihl::save_pgm(scenes[0].image, path);

  const ModelFile mf = ones_model();
  const double mean = bihl::time_pipeline(mf, {path, path, path});
  CHECK(mean > 0.0);
  CHECK(mean < 10.0);
  CHECK(bihl::time_pipeline(mf, {}) == 0.0);
}
