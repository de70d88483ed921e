#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bihl/annotations.hpp"
#include "bihl/binarized_model.hpp"
#include "bihl/detail/parallel.hpp"
#include "bihl/error.hpp"
#include "bihl/eval.hpp"
#include "bihl/hl_feature.hpp"
#include "bihl/image_io.hpp"
#include "bihl/merger.hpp"
#include "bihl/proposer.hpp"
#include "bihl/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return kExitUsage;
}

// Shortest decimal form that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

struct Options {
  std::string images;
  std::string annotations;
  std::string model;
  std::string out;
  std::string dump_features;
  std::string kind;
  int level = 0;
  int budget = 10000;
  double eval_iou = 0.5;
  double nms_iou = 0.875;
  int ng = 4;
  int na = 2;
  bool no_merge = false;
  int ts1 = 25;
  int ts2 = 25;
  double tc = 0.0;
  int tmval = 8;
  std::uint64_t seed = 1;
  int threads = 0;
};

bihl::ProposerConfig proposer_config(const Options& o) {
  bihl::ProposerConfig cfg;
  cfg.min_score = o.tc;
  cfg.min_window_max = o.tmval;
  cfg.nms_iou = o.nms_iou;
  cfg.budget = o.budget;
  return cfg;
}

bihl::MergeConfig merge_config(const Options& o) {
  bihl::MergeConfig cfg;
  cfg.ts1 = o.ts1;
  cfg.ts2 = o.ts2;
  return cfg;
}

bool is_image_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm" || ext == ".png" || ext == ".jpg" ||
         ext == ".jpeg";
}

// (display id, full path) pairs; a directory contributes its image files in
// sorted order with the bare filename as id.
std::vector<std::pair<std::string, std::string>> list_images(const std::string& root) {
  std::vector<std::pair<std::string, std::string>> out;
  if (fs::is_directory(root)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_regular_file() && is_image_file(entry.path()))
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) out.emplace_back(p.filename().string(), p.string());
  } else {
    out.emplace_back(root, root);
  }
  return out;
}

// Ground truth grouped by image stem, for pairing annotation files with
// image files.
std::map<std::string, std::vector<bihl::AnnotatedBox>> annotations_by_stem(
    const std::string& path) {
  std::map<std::string, std::vector<bihl::AnnotatedBox>> by_stem;
  for (bihl::AnnotatedBox& a : bihl::load_annotations(path))
    by_stem[bihl::path_stem(a.image_id)].push_back(std::move(a));
  return by_stem;
}

void write_proposals_csv(
    std::ostream& out,
    const std::vector<std::pair<std::string, std::vector<bihl::ScoredBox>>>& rows) {
  for (const auto& [image, boxes] : rows)
    for (const bihl::ScoredBox& b : boxes)
      out << image << "," << b.box.x << "," << b.box.y << "," << b.box.w << ","
          << b.box.h << "," << format_double(b.score) << "\n";
}

void write_proposals_jsonl(
    std::ostream& out,
    const std::vector<std::pair<std::string, std::vector<bihl::ScoredBox>>>& rows) {
  for (const auto& [image, boxes] : rows)
    for (const bihl::ScoredBox& b : boxes) {
      nlohmann::json j{{"image", image}, {"x", b.box.x},     {"y", b.box.y},
                       {"w", b.box.w},   {"h", b.box.h},     {"score", b.score},
                       {"m", b.scale.m}, {"n", b.scale.n}};
      out << j.dump() << "\n";
    }
}

void dump_feature_maps(const bihl::ImagePlane& img, const bihl::ModelFile& mf,
                       const Options& o, const std::string& stem) {
  fs::create_directories(o.dump_features);
  const auto& scales = mf.scales.empty() ? bihl::enumerate_scales() : mf.scales;
  for (const bihl::ScaleSpec& s : scales) {
    bihl::ImagePlane ds;
    try {
      ds = bihl::downsample(img, s);
    } catch (const bihl::Error&) {
      continue;
    }
    if (ds.width < 2 || ds.height < 2) continue;
    const bihl::HlFeatureMap map = bihl::hl_map(ds, s);
    bihl::ImagePlane vis(map.width, map.height);
    vis.data = map.data;
    const std::string name = stem + "_hl_m" + std::to_string(s.m) + "n" +
                             std::to_string(s.n) + ".pgm";
    bihl::save_pgm(vis, (fs::path(o.dump_features) / name).string());
  }

  if (!o.no_merge) {
    // Reconstruct the merge input to visualize the final seed grid.
    bihl::ProposerConfig pc = proposer_config(o);
    std::vector<bihl::ScoredBox> candidates;
    for (const bihl::ScaleSpec& s : scales) {
      const bihl::ScoreMatrix sm = bihl::score_scale(img, s, mf.model, pc);
      for (int y = 0; y < sm.rows; ++y)
        for (int x = 0; x < sm.cols; ++x) {
          const double score = sm.at(y, x);
          if (score >= pc.min_score)
            candidates.push_back(
                {bihl::box_of_cell(s, y, x, img.width, img.height), score, s});
        }
    }
    std::vector<bihl::ScoredBox> v = bihl::nms(std::move(candidates), pc);
    const bihl::MergeConfig mc = merge_config(o);
    if (int(v.size()) > mc.v_cap) v.resize(std::size_t(mc.v_cap));
    bihl::SeedGrid grid;
    bihl::merge_boxes(v, mc, img.width, img.height, &grid);
    bihl::ImagePlane vis(grid.width, grid.height);
    for (std::size_t i = 0; i < grid.owner.size(); ++i)
      vis.data[i] = grid.owner[i] < 0
                        ? std::uint8_t(255)
                        : std::uint8_t((grid.owner[i] * 37) % 200);
    bihl::save_pgm(vis, (fs::path(o.dump_features) / (stem + "_seedgrid.pgm")).string());
  }
}

int run_train(const Options& o) {
  if (o.ng < 1 || o.ng > 8) return usage_error("ng must be in 1..8");
  if (o.na < 1 || o.na > 64) return usage_error("na must be in 1..64");
  if (!fs::exists(o.images)) return usage_error("images path not found: " + o.images);
  if (!fs::exists(o.annotations))
    return usage_error("annotations path not found: " + o.annotations);

  const auto files = list_images(o.images);
  if (files.empty()) return usage_error("no image files under " + o.images);
  auto by_stem = annotations_by_stem(o.annotations);

  std::vector<bihl::TrainingImage> training;
  training.reserve(files.size());
  for (const auto& [id, path] : files) {
    bihl::TrainingImage ti;
    ti.image = bihl::load_image(path);
    auto it = by_stem.find(bihl::path_stem(id));
    if (it != by_stem.end()) ti.boxes = it->second;
    bihl::clip_annotations(ti.boxes, ti.image.width, ti.image.height);
    training.push_back(std::move(ti));
  }

  bihl::TrainConfig cfg;
  cfg.ng = o.ng;
  cfg.na = o.na;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  cfg.positive_iou = o.eval_iou;

  bihl::TrainStats stats;
  const bihl::ModelFile mf = bihl::train_model(training, cfg, &stats);
  bihl::save_model(mf, o.model);

  std::cout << "samples: " << (stats.positives + stats.negatives) << " ("
            << stats.positives << " positive, " << stats.negatives
            << " negative) from " << training.size() << " images\n";
  if (!stats.epoch_loss.empty()) {
    double lo = stats.epoch_loss[0];
    for (double v : stats.epoch_loss) lo = std::min(lo, v);
    std::cout << "loss: " << format_double(stats.epoch_loss.front()) << " -> "
              << format_double(stats.epoch_loss.back()) << " over "
              << stats.epoch_loss.size() << " epochs (min "
              << format_double(lo) << ")\n";
  }
  std::cout << "model written to " << o.model << "\n";
  return kExitOk;
}

int run_propose(const Options& o) {
  if (!fs::exists(o.images)) return usage_error("images path not found: " + o.images);
  if (!fs::exists(o.model)) return usage_error("model path not found: " + o.model);
  if (o.budget < 1) return usage_error("budget must be >= 1");

  const bihl::ModelFile mf = bihl::load_model(o.model);
  const auto files = list_images(o.images);
  if (files.empty()) return usage_error("no image files under " + o.images);

  const bihl::ProposerConfig pc = proposer_config(o);
  const bihl::MergeConfig mc = merge_config(o);

  std::vector<std::pair<std::string, std::vector<bihl::ScoredBox>>> rows(files.size());
  bihl::detail::parallel_for(files.size(), o.threads, [&](std::size_t i) {
    const bihl::ImagePlane img = bihl::load_image(files[i].second);
    rows[i] = {files[i].first, bihl::propose(img, mf, pc, mc, !o.no_merge)};
    if (!o.dump_features.empty())
      dump_feature_maps(img, mf, o, bihl::path_stem(files[i].first));
  });

  std::ofstream out(o.out, std::ios::binary);
  if (!out) throw bihl::Error("io", o.out + ": cannot open for writing");
  if (fs::path(o.out).extension() == ".jsonl")
    write_proposals_jsonl(out, rows);
  else
    write_proposals_csv(out, rows);
  if (!out) throw bihl::Error("io", o.out + ": write error");

  std::size_t total = 0;
  for (const auto& [_, boxes] : rows) total += boxes.size();
  std::cerr << total << " proposals for " << rows.size() << " image(s) -> "
            << o.out << "\n";
  return kExitOk;
}

int run_eval(const Options& o) {
  if (!fs::exists(o.images)) return usage_error("images path not found: " + o.images);
  if (!fs::exists(o.annotations))
    return usage_error("annotations path not found: " + o.annotations);
  if (!fs::exists(o.model)) return usage_error("model path not found: " + o.model);

  const bihl::ModelFile mf = bihl::load_model(o.model);
  const auto files = list_images(o.images);
  if (files.empty()) return usage_error("no image files under " + o.images);
  auto by_stem = annotations_by_stem(o.annotations);

  std::vector<bihl::ImagePlane> images(files.size());
  std::vector<std::vector<bihl::AnnotatedBox>> gt(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    images[i] = bihl::load_image(files[i].second);
    auto it = by_stem.find(bihl::path_stem(files[i].first));
    if (it != by_stem.end()) gt[i] = it->second;
    bihl::clip_annotations(gt[i], images[i].width, images[i].height);
  }

  const bihl::EvalReport report =
      bihl::evaluate(images, gt, mf, proposer_config(o), merge_config(o),
                     !o.no_merge, o.eval_iou, o.threads);

  fs::path base(o.out);
  if (base.extension() == ".json" || base.extension() == ".csv")
    base.replace_extension();
  bihl::write_report_json(report, base.string() + ".json");
  bihl::write_report_csv(report, base.string() + ".csv");

  std::cout << "DR@" << o.eval_iou << " (budget " << o.budget
            << "): " << format_double(report.detection_rate)
            << "  MABO: " << format_double(report.mabo)
            << "  mean time: " << format_double(report.mean_time_s) << " s\n";
  return kExitOk;
}

int run_repeat(const Options& o) {
  if (!fs::exists(o.images)) return usage_error("images path not found: " + o.images);
  if (!fs::exists(o.model)) return usage_error("model path not found: " + o.model);

  const bihl::ModelFile mf = bihl::load_model(o.model);
  const auto files = list_images(o.images);
  if (files.empty()) return usage_error("no image files under " + o.images);

  std::vector<bihl::ImagePlane> images(files.size());
  for (std::size_t i = 0; i < files.size(); ++i)
    images[i] = bihl::load_image(files[i].second);

  const bihl::ProposerConfig pc = proposer_config(o);
  const bihl::MergeConfig mc = merge_config(o);

  const bihl::PerturbKind kinds[] = {
      bihl::PerturbKind::kScale,       bihl::PerturbKind::kRotate,
      bihl::PerturbKind::kIllumination, bihl::PerturbKind::kJpeg,
      bihl::PerturbKind::kBlur,        bihl::PerturbKind::kSaltPepper};

  struct Row {
    std::string kind;
    int level;
    double param;
    double value;
  };
  std::vector<Row> table;
  for (bihl::PerturbKind kind : kinds) {
    const auto& ladder = bihl::perturb_ladder(kind);
    for (int level = 0; level < int(ladder.size()); ++level) {
      std::vector<double> values(images.size());
      bihl::detail::parallel_for(images.size(), o.threads, [&](std::size_t i) {
        values[i] = bihl::repeatability(images[i], mf, {kind, level}, pc, mc,
                                        !o.no_merge, o.seed, 1000, o.eval_iou);
      });
      double sum = 0.0;
      for (double v : values) sum += v;
      table.push_back({bihl::perturb_kind_name(kind), level,
                       ladder[std::size_t(level)],
                       images.empty() ? 0.0 : sum / double(images.size())});
      std::cout << table.back().kind << " level " << level << " (param "
                << format_double(table.back().param)
                << "): " << format_double(table.back().value) << "\n";
    }
  }

  fs::path base(o.out);
  if (base.extension() == ".json" || base.extension() == ".csv")
    base.replace_extension();
  {
    nlohmann::json j = nlohmann::json::array();
    for (const Row& r : table)
      j.push_back({{"kind", r.kind},
                   {"level", r.level},
                   {"parameter", r.param},
                   {"repeatability", r.value}});
    std::ofstream out(base.string() + ".json");
    if (!out) throw bihl::Error("io", base.string() + ".json: cannot open for writing");
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(base.string() + ".csv");
    if (!out) throw bihl::Error("io", base.string() + ".csv: cannot open for writing");
    out << "kind,level,parameter,repeatability\n";
    for (const Row& r : table)
      out << r.kind << "," << r.level << "," << format_double(r.param) << ","
          << format_double(r.value) << "\n";
  }
  return kExitOk;
}

int run_perturb(const Options& o) {
  if (!fs::exists(o.images)) return usage_error("images path not found: " + o.images);
  std::optional<bihl::PerturbKind> kind;
  for (bihl::PerturbKind k :
       {bihl::PerturbKind::kScale, bihl::PerturbKind::kRotate,
        bihl::PerturbKind::kIllumination, bihl::PerturbKind::kJpeg,
        bihl::PerturbKind::kBlur, bihl::PerturbKind::kSaltPepper})
    if (o.kind == bihl::perturb_kind_name(k)) kind = k;
  if (!kind)
    return usage_error(
        "kind must be one of scale, rotate, illumination, jpeg, blur, saltpepper");
  const auto& ladder = bihl::perturb_ladder(*kind);
  if (o.level < 0 || std::size_t(o.level) >= ladder.size())
    return usage_error("level for " + o.kind + " must be in 0.." +
                       std::to_string(ladder.size() - 1));

  const auto files = list_images(o.images);
  if (files.empty()) return usage_error("no image files under " + o.images);
  fs::create_directories(o.out);

  for (const auto& [id, path] : files) {
    const bihl::ImagePlane img = bihl::load_image(path);
    const bihl::PerturbResult r = bihl::perturb(img, {*kind, o.level}, o.seed);
    const std::string stem =
        bihl::path_stem(id) + "_" + o.kind + std::to_string(o.level);
    if (*kind == bihl::PerturbKind::kJpeg) {
      const fs::path dest = fs::path(o.out) / (stem + ".jpg");
      std::ofstream out(dest, std::ios::binary);
      if (!out) throw bihl::Error("io", dest.string() + ": cannot open for writing");
      out.write(reinterpret_cast<const char*>(r.jpeg_bytes.data()),
                std::streamsize(r.jpeg_bytes.size()));
    } else {
      bihl::save_png(r.image, (fs::path(o.out) / (stem + ".png")).string());
    }
  }
  std::cout << files.size() << " perturbed image(s) -> " << o.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binarized horizontal high-frequency object proposals"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "RNG seed");
    sub->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  };
  auto add_proposal_opts = [&](CLI::App* sub) {
    sub->add_option("--budget,--max", o.budget, "global proposal budget");
    sub->add_flag("--no-merge", o.no_merge, "disable the border merge stage");
    sub->add_option("--ts1", o.ts1, "merge neighbor-fusion rank threshold");
    sub->add_option("--ts2", o.ts2, "merge collision-fusion rank threshold");
    sub->add_option("--tc", o.tc, "minimum classifier score kept");
    sub->add_option("--tmval", o.tmval, "minimum window max HL value kept");
  };

  CLI::App* train = app.add_subcommand("train", "fit an objectness model");
  train->add_option("--images", o.images, "image file or directory")->required();
  train->add_option("--annotations", o.annotations, "annotation file or directory")
      ->required();
  train->add_option("--model", o.model, "output model path")->required();
  train->add_option("--ng", o.ng, "descriptor bit planes (1..8)");
  train->add_option("--na", o.na, "basis vectors in the weight decomposition");
  train->add_option("--iou", o.eval_iou, "positive assignment IoU threshold")
      ->default_val(0.5);
  add_common(train);

  CLI::App* propose = app.add_subcommand("propose", "emit scored proposal boxes");
  propose->add_option("--images", o.images, "image file or directory")->required();
  propose->add_option("--model", o.model, "model file")->required();
  propose->add_option("--out", o.out, "output CSV (or .jsonl) path")->required();
  propose->add_option("--iou", o.nms_iou, "NMS suppression IoU threshold")
      ->default_val(0.875);
  propose->add_option("--dump-features", o.dump_features,
                      "directory for HL map and seed grid dumps");
  add_proposal_opts(propose);
  add_common(propose);

  CLI::App* eval = app.add_subcommand("eval", "recall / MABO / timing report");
  eval->add_option("--images", o.images, "image file or directory")->required();
  eval->add_option("--annotations", o.annotations, "annotation file or directory")
      ->required();
  eval->add_option("--model", o.model, "model file")->required();
  eval->add_option("--out", o.out, "report path base (.json/.csv written)")
      ->required();
  eval->add_option("--iou", o.eval_iou, "match IoU threshold")->default_val(0.5);
  add_proposal_opts(eval);
  add_common(eval);

  CLI::App* repeat = app.add_subcommand("repeat", "repeatability table");
  repeat->add_option("--images", o.images, "image file or directory")->required();
  repeat->add_option("--model", o.model, "model file")->required();
  repeat->add_option("--out", o.out, "table path base (.json/.csv written)")
      ->required();
  repeat->add_option("--iou", o.eval_iou, "match IoU threshold")->default_val(0.5);
  add_proposal_opts(repeat);
  add_common(repeat);

  CLI::App* perturb = app.add_subcommand("perturb", "write perturbed images");
  perturb->add_option("--images", o.images, "image file or directory")->required();
  perturb->add_option("--kind", o.kind, "perturbation family")->required();
  perturb->add_option("--level", o.level, "ladder level (0-based)")->required();
  perturb->add_option("--out", o.out, "output directory")->required();
  add_common(perturb);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) return run_train(o);
    if (propose->parsed()) return run_propose(o);
    if (eval->parsed()) return run_eval(o);
    if (repeat->parsed()) return run_repeat(o);
    if (perturb->parsed()) return run_perturb(o);
    return usage_error("no subcommand");
  } catch (const bihl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
