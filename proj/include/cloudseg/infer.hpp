#pragma once

#include <span>
#include <vector>

#include "cloudseg/net.hpp"
#include "cloudseg/raster.hpp"

namespace cloudseg {

// k fold models sharing one configuration.
class EnsembleModel {
 public:
  explicit EnsembleModel(std::vector<UNetModel> members);

  const PipelineConfig& config() const { return members_.front().config(); }
  const std::vector<UNetModel>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }

 private:
  std::vector<UNetModel> members_;
};

Batch<float> to_batch(std::span<const MultiBandPatch> patches);

// Softmax cloud channel of the two logits.
ProbabilityMap cloud_probability(const Batch<float>& logits, int index);

ProbabilityMap predict_patch(const UNetModel& model, const MultiBandPatch& normalized);

// Arithmetic pixel mean, summed in member order.
ProbabilityMap ensemble_mean(std::span<const ProbabilityMap> maps);

// split_scene -> per-member prediction -> ensemble_mean per patch -> stitch_scene.
// Scenes smaller than the patch size are zero-padded and cropped back.
ProbabilityMap sliding_window_predict(const EnsembleModel& ensemble, const MultiBandPatch& scene, double overlap,
                                      Blend blend);

// mask = 1 where p >= tau.
CloudMask binarize(const ProbabilityMap& map, double tau = 0.5);

}  // namespace cloudseg
