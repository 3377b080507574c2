#include "cloudseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "cloudseg/eval.hpp"
#include "cloudseg/infer.hpp"

namespace cloudseg {

void TrainHyper::validate() const {
  require(epochs >= 0, ErrorKind::Argument, "epochs must be >= 0");
  require(batches_per_epoch >= 1, ErrorKind::Argument, "batches_per_epoch must be >= 1");
  require(lr0 > 0, ErrorKind::Argument, "lr0 must be positive");
  require(momentum >= 0 && momentum < 1, ErrorKind::Argument, "momentum must be in [0,1)");
}

void sgd_step(UNetModel& model, const LayerGradients<float>& grads, double lr, double momentum, SgdState& state) {
  const auto& params = model.parameters();
  require(grads.size() == params.size(), ErrorKind::Argument, "gradient list does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].size() == params[i].values.size(), ErrorKind::Argument,
            "gradient shape mismatch for " + params[i].name);
    for (float g : grads[i])
      require(std::isfinite(g), ErrorKind::Numeric, "non-finite gradient in layer " + params[i].name);
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.values.size(), 0.0f);
  }
  auto& mut = model.mutable_parameters();
  const float mu = static_cast<float>(momentum), eta = static_cast<float>(lr);
  for (std::size_t i = 0; i < mut.size(); ++i) {
    auto& theta = mut[i].values;
    auto& v = state.velocity[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = mu * v[j] - eta * g[j];
      theta[j] += mu * v[j] - eta * g[j];
    }
  }
}

double poly_lr(int epoch, int total, double lr0) {
  require(total > 0 && epoch >= 0 && epoch < total, ErrorKind::Argument, "poly_lr: epoch out of range");
  return lr0 * std::pow(1.0 - static_cast<double>(epoch) / total, 0.9);
}

AugmentDraw AugmentDraw::sample(Rng& rng, bool square) {
  AugmentDraw d;
  d.flip_h = rng.coin();
  d.flip_v = rng.coin();
  const auto r = static_cast<int>(rng.below(4));
  d.rot90 = square ? r : (r & 1) * 2;
  return d;
}

namespace {

// Applies the pixel permutation defined by `draw` to one H x W plane.
template <class T>
std::vector<T> transform_plane(const T* src, int h, int w, const AugmentDraw& d, int& oh, int& ow) {
  const int turns = ((d.rot90 % 4) + 4) % 4;
  oh = turns % 2 ? w : h;
  ow = turns % 2 ? h : w;
  std::vector<T> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int fy = d.flip_v ? h - 1 - y : y;
      int fx = d.flip_h ? w - 1 - x : x;
      int ty = fy, tx = fx;
      // Counter-clockwise quarter turns.
      switch (turns) {
        case 1: ty = w - 1 - fx; tx = fy; break;
        case 2: ty = h - 1 - fy; tx = w - 1 - fx; break;
        case 3: ty = fx; tx = h - 1 - fy; break;
        default: break;
      }
      out[static_cast<std::size_t>(ty) * ow + tx] = src[static_cast<std::size_t>(y) * w + x];
    }
  return out;
}

}  // namespace

void augment(MultiBandPatch& patch, CloudMask& mask, const AugmentDraw& draw) {
  require(mask.height == patch.height && mask.width == patch.width, ErrorKind::Argument,
          "augment: mask shape does not match patch");
  require(draw.rot90 % 2 == 0 || patch.height == patch.width, ErrorKind::Argument,
          "augment: quarter turns need a square patch");
  int oh = 0, ow = 0;
  std::vector<float> values;
  values.reserve(patch.values.size());
  for (int b = 0; b < patch.bands; ++b) {
    auto plane = transform_plane(patch.band(b).data(), patch.height, patch.width, draw, oh, ow);
    values.insert(values.end(), plane.begin(), plane.end());
  }
  auto m = transform_plane(mask.values.data(), mask.height, mask.width, draw, oh, ow);
  patch.values = std::move(values);
  patch.height = oh;
  patch.width = ow;
  mask = CloudMask(oh, ow, std::move(m));
}

void augment(MultiBandPatch& patch, CloudMask& mask, Rng& rng) {
  augment(patch, mask, AugmentDraw::sample(rng, patch.height == patch.width));
}

FoldSplit make_folds(std::span<const ManifestRecord> records, int k, std::uint64_t seed) {
  require(k >= 2, ErrorKind::Argument, "need at least two folds");
  std::map<std::string, std::vector<std::size_t>> by_scene;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].scene_id.empty())
      groups.push_back({i});
    else
      by_scene[records[i].scene_id].push_back(i);
  }
  for (auto& [scene, idx] : by_scene) groups.push_back(std::move(idx));
  require(static_cast<std::size_t>(k) <= groups.size(), ErrorKind::Argument,
          "k = " + std::to_string(k) + " folds exceed " + std::to_string(groups.size()) + " independent groups");
  Rng rng(seed);
  for (std::size_t i = groups.size(); i > 1; --i) std::swap(groups[i - 1], groups[rng.below(i)]);

  FoldSplit split;
  split.k = k;
  std::vector<std::vector<std::size_t>> members(k);
  for (const auto& g : groups) {
    auto smallest = std::min_element(members.begin(), members.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    smallest->insert(smallest->end(), g.begin(), g.end());
  }
  for (int f = 0; f < k; ++f) {
    Fold fold;
    fold.validation = members[f];
    std::sort(fold.validation.begin(), fold.validation.end());
    for (int o = 0; o < k; ++o)
      if (o != f) fold.train.insert(fold.train.end(), members[o].begin(), members[o].end());
    std::sort(fold.train.begin(), fold.train.end());
    split.folds.push_back(std::move(fold));
  }
  return split;
}

std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string out = "epoch,lr,train_loss,val_ji\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", p.epoch, p.lr, p.train_loss, p.val_ji);
    out += buf;
  }
  return out;
}

std::pair<MultiBandPatch, CloudMask> crop_or_pad(const MultiBandPatch& p, const CloudMask& m, int h, int w, Rng& rng) {
  MultiBandPatch out(p.bands, h, w);
  out.patch_id = p.patch_id;
  out.scene_id = p.scene_id;
  CloudMask mask(h, w);
  const int oy = p.height > h ? static_cast<int>(rng.below(static_cast<std::uint64_t>(p.height - h + 1))) : 0;
  const int ox = p.width > w ? static_cast<int>(rng.below(static_cast<std::uint64_t>(p.width - w + 1))) : 0;
  const int ch = std::min(h, p.height), cw = std::min(w, p.width);
  for (int b = 0; b < p.bands; ++b)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) out.at(b, y, x) = p.at(b, oy + y, ox + x);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) mask(y, x) = m(oy + y, ox + x);
  return {std::move(out), std::move(mask)};
}

namespace {

double validation_ji(const UNetModel& model, std::span<const LabeledPatch> patches, std::span<const std::size_t> idx,
                     double tau) {
  EnsembleModel single({model});
  double sum = 0.0;
  std::size_t n = 0;
  for (auto i : idx) {
    const auto& p = patches[i];
    auto prob = sliding_window_predict(single, p.image, 0.0, Blend::Uniform);
    auto ji = metrics_from_confusion(confusion(binarize(prob, tau), *p.mask)).ji;
    if (ji) {
      sum += *ji;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TrainResult train_fold(const PipelineConfig& config, std::span<const LabeledPatch> patches, const Fold& fold,
                       const TrainHyper& hyper) {
  hyper.validate();
  validate_config(config);
  for (auto i : fold.train) {
    require(i < patches.size(), ErrorKind::Argument, "fold index out of range");
    require(patches[i].mask.has_value(), ErrorKind::Consistency, "training patch without mask");
  }
  for (auto i : fold.validation)
    require(i < patches.size() && patches[i].mask.has_value(), ErrorKind::Consistency,
            "validation patch without mask");

  TrainResult result{UNetModel::init_params(config, derive_seed(hyper.seed, 0)), {}};
  if (hyper.epochs == 0) return result;
  require(!fold.train.empty(), ErrorKind::Argument, "fold has no training patches");

  Rng rng(derive_seed(hyper.seed, 1));
  SgdState sgd;
  auto& model = result.model;
  const int bs = config.batch_size;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double lr = poly_lr(epoch, hyper.epochs, hyper.lr0);
    double loss_sum = 0.0;
    for (int step = 0; step < hyper.batches_per_epoch; ++step) {
      std::vector<MultiBandPatch> imgs;
      std::vector<CloudMask> masks;
      for (int b = 0; b < bs; ++b) {
        const auto& src = patches[fold.train[rng.below(fold.train.size())]];
        auto [img, mask] = crop_or_pad(src.image, *src.mask, config.patch_height, config.patch_width, rng);
        augment(img, mask, rng);
        imgs.push_back(std::move(img));
        masks.push_back(std::move(mask));
      }
      ForwardCache<float> cache;
      auto logits = model.forward(to_batch(imgs), &cache);
      auto loss = dice_ce_loss<float>(logits, masks);
      require(std::isfinite(loss.loss), ErrorKind::Numeric,
              "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(step));
      auto grads = model.backward(cache, loss.grad_logits);
      sgd_step(model, grads, lr, hyper.momentum, sgd);
      loss_sum += loss.loss;
    }
    CurvePoint pt;
    pt.epoch = epoch;
    pt.lr = lr;
    pt.train_loss = loss_sum / hyper.batches_per_epoch;
    pt.val_ji = fold.validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : validation_ji(model, patches, fold.validation, config.threshold);
    result.curve.push_back(pt);
  }
  return result;
}

}  // namespace cloudseg
