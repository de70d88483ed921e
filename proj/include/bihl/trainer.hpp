#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "bihl/annotations.hpp"
#include "bihl/binarized_model.hpp"
#include "bihl/image.hpp"

namespace bihl {

struct TrainConfig {
  double positive_iou = 0.5;    // min co-centered IoU for a usable positive
  int negatives_per_image = 50;
  double negative_iou = 0.3;    // negatives must stay below this vs every GT
  int epochs = 20;
  double learning_rate = 0.01;
  double c = 1.0;               // inverse regularization strength
  int ng = 4;
  int na = 2;
  std::uint64_t seed = 1;
  int threads = 0;              // 0 = hardware concurrency
};

// One training example: the 64 HL bytes of an 8x8 window and its label.
struct Sample {
  std::array<std::uint8_t, 64> x{};
  int label = 0;  // +1 object, -1 background
};

// The pyramid scale whose window (16*2^n wide, 16*2^m high) best matches the
// box when co-centered, by IoU; none when even the best IoU is below
// `positive_iou`. Ties break toward the lexicographically smaller (m, n).
std::optional<ScaleSpec> assign_scale(const Box& box, double positive_iou = 0.5);

// An image with its ground-truth boxes, the unit of sample extraction.
struct TrainingImage {
  ImagePlane image;
  std::vector<AnnotatedBox> boxes;
};

// Builds the training set: one positive per assignable ground-truth box
// (descriptor at the grid cell nearest the box center, at the assigned
// scale), plus cfg.negatives_per_image negatives drawn at uniformly random
// (scale, y, x) whose window overlaps every ground-truth box below
// cfg.negative_iou. Deterministic for a fixed seed regardless of thread
// count. Throws Error("no-positives") when no box yields a positive.
std::vector<Sample> extract_samples(const std::vector<TrainingImage>& images,
                                    const TrainConfig& cfg);

// Per-epoch objective values and class counts from one training run.
struct TrainStats {
  std::vector<double> epoch_loss;
  int positives = 0;
  int negatives = 0;
};

// L2-regularized hinge loss minimized by seeded stochastic subgradient
// descent; bias-free (score 0 is the decision boundary). Bit-reproducible for
// a fixed seed. Throws Error("single-class") unless both labels occur.
std::array<double, 64> train_linear(const std::vector<Sample>& samples,
                                    const TrainConfig& cfg,
                                    TrainStats* stats = nullptr);

// extract_samples + train_linear + decompose, assembled into a model file
// covering every pyramid scale, calibration off.
ModelFile train_model(const std::vector<TrainingImage>& images,
                      const TrainConfig& cfg = {}, TrainStats* stats = nullptr);

}  // namespace bihl
