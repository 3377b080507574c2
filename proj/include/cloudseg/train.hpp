#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cloudseg/manifest.hpp"
#include "cloudseg/net.hpp"

namespace cloudseg {

inline constexpr double kDiceSmooth = 1e-5;

template <class T>
struct LossResult {
  T loss = 0;
  T ce = 0;
  T dice = 0;  // 1 - soft Dice
  Batch<T> grad_logits;
};

// 0.5 * cross-entropy (mean over pixels) + 0.5 * (1 - soft Dice of the cloud channel
// over the whole batch), with analytic gradient w.r.t. the logits.
template <class T>
LossResult<T> dice_ce_loss(const Batch<T>& logits, std::span<const CloudMask> gt) {
  require(logits.channels == 2, ErrorKind::Argument, "loss expects two logit channels");
  require(static_cast<int>(gt.size()) == logits.n, ErrorKind::Argument, "loss: one mask per batch item required");
  const std::size_t plane = static_cast<std::size_t>(logits.height) * logits.width;
  for (const auto& m : gt)
    require(m.height == logits.height && m.width == logits.width, ErrorKind::Argument, "loss: mask shape mismatch");

  const double total = static_cast<double>(plane) * logits.n;
  std::vector<double> prob(plane * logits.n);
  double ce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
  for (int i = 0; i < logits.n; ++i) {
    const T* z = logits.sample(i);
    for (std::size_t px = 0; px < plane; ++px) {
      const double z0 = z[px], z1 = z[plane + px];
      const double g = gt[i].values[px] ? 1.0 : 0.0;
      const double m = std::max(z0, z1);
      const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
      ce -= g ? z1 - lse : z0 - lse;
      const double p = std::exp(z1 - lse);
      prob[i * plane + px] = p;
      inter += p * g;
      psum += p;
      gsum += g;
    }
  }
  ce /= total;
  const double den = psum + gsum + kDiceSmooth;
  const double dice = (2.0 * inter + kDiceSmooth) / den;

  LossResult<T> r;
  r.ce = static_cast<T>(ce);
  r.dice = static_cast<T>(1.0 - dice);
  r.loss = static_cast<T>(0.5 * ce + 0.5 * (1.0 - dice));
  r.grad_logits = Batch<T>(logits.n, 2, logits.height, logits.width);
  for (int i = 0; i < logits.n; ++i) {
    T* gz = r.grad_logits.sample(i);
    for (std::size_t px = 0; px < plane; ++px) {
      const double p = prob[i * plane + px];
      const double g = gt[i].values[px] ? 1.0 : 0.0;
      // d(dice)/dp, then chain through p = softmax_1 (dp/dz1 = p(1-p) = -dp/dz0).
      const double ddice_dp = (2.0 * g * den - (2.0 * inter + kDiceSmooth)) / (den * den);
      const double dl_dp = -0.5 * ddice_dp;
      const double dz1 = 0.5 * (p - g) / total + dl_dp * p * (1.0 - p);
      gz[px] = static_cast<T>(-dz1);
      gz[plane + px] = static_cast<T>(dz1);
    }
  }
  return r;
}

struct TrainHyper {
  int epochs = 1000;
  int batches_per_epoch = 50;
  double lr0 = 0.01;
  double momentum = 0.99;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Nesterov momentum buffers, one per parameter tensor.
struct SgdState {
  std::vector<std::vector<float>> velocity;
};

// v <- mu v - lr g ; theta <- theta + mu v - lr g. Non-finite gradients abort with the
// offending parameter's name before anything is modified.
void sgd_step(UNetModel& model, const LayerGradients<float>& grads, double lr, double momentum, SgdState& state);

double poly_lr(int epoch, int total, double lr0);

struct AugmentDraw {
  bool flip_h = false;
  bool flip_v = false;
  int rot90 = 0;  // quarter turns counter-clockwise; non-square inputs only take 0 or 2

  static AugmentDraw sample(Rng& rng, bool square);
};

void augment(MultiBandPatch& patch, CloudMask& mask, const AugmentDraw& draw);
void augment(MultiBandPatch& patch, CloudMask& mask, Rng& rng);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

struct FoldSplit {
  int k = 0;
  std::vector<Fold> folds;  // indices into the record list
};

// Groups records by scene_id (records without one are their own group), shuffles the
// groups by seed and assigns each to the currently smallest fold.
FoldSplit make_folds(std::span<const ManifestRecord> records, int k, std::uint64_t seed);

struct CurvePoint {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_ji = 0.0;  // NaN when no validation patch has a defined JI
};

struct TrainResult {
  UNetModel model;
  std::vector<CurvePoint> curve;
};

std::string curve_csv(std::span<const CurvePoint> curve);

// `patches` are normalized; train/validation index into them.
TrainResult train_fold(const PipelineConfig& config, std::span<const LabeledPatch> patches, const Fold& fold,
                       const TrainHyper& hyper);

// Random crop (or zero pad) of a patch/mask pair to the configured patch size.
std::pair<MultiBandPatch, CloudMask> crop_or_pad(const MultiBandPatch& p, const CloudMask& m, int h, int w, Rng& rng);

}  // namespace cloudseg
