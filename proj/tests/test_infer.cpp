#include <gtest/gtest.h>

#include <cmath>

#include "cloudseg/fingerprint.hpp"
#include "cloudseg/infer.hpp"
#include "cloudseg/synth.hpp"
#include "cloudseg/train.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cloudseg;

namespace {

// Zero convs except a constant head: every pixel gets the same logits.
UNetModel constant_model(const PipelineConfig& c, float z_clear, float z_cloud) {
  UNetModel m(c);
  m.mutable_parameters()[m.parameter_index("head.bias")].values = {z_clear, z_cloud};
  return m;
}

}  // namespace

TEST(Probability, SoftmaxProperties) {
  auto c = gradcheck::tiny_config(2, 4, 1, 8);
  auto m = UNetModel::init_params(c, 3);
  MultiBandPatch x(2, 8, 8);
  for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] = std::sin(static_cast<float>(i));
  auto logits = m.forward(to_batch(std::span<const MultiBandPatch>(&x, 1)));
  auto p = predict_patch(m, x);
  for (std::size_t i = 0; i < p.size(); ++i) {
    ASSERT_GE(p.values[i], 0.0f);
    ASSERT_LE(p.values[i], 1.0f);
    const double z0 = logits.data[i], z1 = logits.data[64 + i];
    const double hand = std::exp(z1) / (std::exp(z0) + std::exp(z1));
    EXPECT_NEAR(p.values[i], hand, 1e-6);
    EXPECT_NEAR(p.values[i] + (1 - hand), 1.0, 1e-6);
  }
  UNetModel zero(c);
  for (float v : predict_patch(zero, x).values) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Ensemble, MeanProperties) {
  std::vector<ProbabilityMap> maps = {ProbabilityMap(3, 3, 0.0f), ProbabilityMap(3, 3, 1.0f)};
  for (float v : ensemble_mean(maps).values) EXPECT_FLOAT_EQ(v, 0.5f);
  oracle::Gen g(4);
  std::vector<ProbabilityMap> rnd;
  for (int k = 0; k < 5; ++k) {
    ProbabilityMap m(4, 4);
    for (auto& v : m.values) v = static_cast<float>(g.uniform());
    rnd.push_back(m);
  }
  std::vector<ProbabilityMap> same = {rnd[0], rnd[0], rnd[0]};
  EXPECT_EQ(ensemble_mean(same).values, rnd[0].values);
  auto a = ensemble_mean(rnd);
  std::reverse(rnd.begin(), rnd.end());
  auto b = ensemble_mean(rnd);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-7);
  std::vector<ProbabilityMap> bad = {ProbabilityMap(3, 3), ProbabilityMap(3, 4)};
  EXPECT_THROW(ensemble_mean(bad), Error);
}

TEST(Ensemble, RejectsMixedConfigs) {
  std::vector<UNetModel> ms = {UNetModel(gradcheck::tiny_config(2, 4, 1, 8)),
                               UNetModel(gradcheck::tiny_config(2, 8, 1, 8))};
  EXPECT_THROW(EnsembleModel{ms}, Error);
}

TEST(SlidingWindow, SinglePatchEqualsPredictPatch) {
  auto c = gradcheck::tiny_config(2, 4, 2, 16);
  auto m = UNetModel::init_params(c, 5);
  MultiBandPatch x(2, 16, 16);
  for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] = std::cos(0.37f * static_cast<float>(i));
  EnsembleModel e({m});
  auto direct = predict_patch(m, x);
  for (Blend b : {Blend::Uniform, Blend::Gaussian})
    for (double ov : {0.0, 0.5}) {
      auto sw = sliding_window_predict(e, x, ov, b);
      for (std::size_t i = 0; i < sw.size(); ++i) EXPECT_NEAR(sw.values[i], direct.values[i], 1e-6);
    }
}

TEST(SlidingWindow, ConstantModelGivesConstantMap) {
  auto c = gradcheck::tiny_config(1, 2, 1, 16);
  EnsembleModel e({constant_model(c, 0.0f, 1.0f), constant_model(c, 0.0f, -1.0f)});
  MultiBandPatch scene(1, 37, 45);
  const float expect = 0.5f;  // sigmoid(1) and sigmoid(-1) average to exactly 0.5
  for (Blend b : {Blend::Uniform, Blend::Gaussian})
    for (double ov : {0.0, 0.25, 0.5}) {
      auto p = sliding_window_predict(e, scene, ov, b);
      EXPECT_EQ(p.height, 37);
      EXPECT_EQ(p.width, 45);
      for (float v : p.values) ASSERT_NEAR(v, expect, 1e-6);
    }
  MultiBandPatch tiny(1, 9, 5);
  auto p = sliding_window_predict(e, tiny, 0.5, Blend::Gaussian);
  EXPECT_EQ(p.height, 9);
  EXPECT_EQ(p.width, 5);
}

TEST(Binarize, Rules) {
  ProbabilityMap p(1, 4, std::vector<float>{0.1f, 0.5f, 0.49f, 0.9f});
  auto m = binarize(p, 0.5);
  EXPECT_EQ(m.values, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  oracle::Gen g(6);
  ProbabilityMap r(8, 8);
  for (auto& v : r.values) v = static_cast<float>(g.uniform());
  std::size_t prev = r.size() + 1;
  for (double tau = 0.05; tau < 1.0; tau += 0.05) {
    auto c = binarize(r, tau).cloud_count();
    EXPECT_LE(c, prev);
    prev = c;
  }
  EXPECT_EQ(binarize(ProbabilityMap(3, 3, 0.2f), 0.5).cloud_count(), 0u);
  EXPECT_THROW(binarize(p, 0.0), Error);
  EXPECT_THROW(binarize(p, 1.0), Error);
}

TEST(SlidingWindow, OverlapReducesSeamError) {
  SynthSpec s;
  s.n_scenes = 12;
  s.height = s.width = 64;
  s.seed = 31;
  std::vector<LabeledPatch> train;
  for (int i = 0; i < s.n_scenes; ++i) {
    auto sc = generate_scene(s, i);
    train.push_back({sc.reflectance, sc.mask});
  }
  auto f = compute_fingerprint(train);
  for (auto& p : train) p.image = normalize_patch(p.image, f);
  auto c = gradcheck::tiny_config(4, 8, 2, 32);
  c.batch_size = 4;
  Fold fold;
  for (int i = 0; i < s.n_scenes; ++i) fold.train.push_back(i);
  TrainHyper h;
  h.epochs = 20;
  h.batches_per_epoch = 15;
  h.seed = 2;
  EnsembleModel e({train_fold(c, train, fold, h).model});

  SynthSpec t = s;
  t.seed = 77;
  t.n_scenes = 40;
  double err0 = 0, err5 = 0;
  for (int i = 0; i < t.n_scenes; ++i) {
    auto sc = generate_scene(t, i);
    auto x = normalize_patch(sc.reflectance, f);
    err0 += oracle::seam_band_error(sliding_window_predict(e, x, 0.0, Blend::Gaussian), sc.mask, 32, 32);
    err5 += oracle::seam_band_error(sliding_window_predict(e, x, 0.5, Blend::Gaussian), sc.mask, 32, 32);
  }
  std::cout << "seam-band error: overlap 0 " << err0 / t.n_scenes << ", overlap 0.5 " << err5 / t.n_scenes << "\n";
  EXPECT_LT(err5, err0);
}
