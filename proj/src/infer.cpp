#include "cloudseg/infer.hpp"

#include <cmath>

namespace cloudseg {

EnsembleModel::EnsembleModel(std::vector<UNetModel> members) : members_(std::move(members)) {
  require(!members_.empty(), ErrorKind::Argument, "ensemble needs at least one member");
  const auto hash = config_hash(members_.front().config());
  for (const auto& m : members_)
    require(config_hash(m.config()) == hash, ErrorKind::Consistency, "ensemble members differ in configuration");
}

Batch<float> to_batch(std::span<const MultiBandPatch> patches) {
  require(!patches.empty(), ErrorKind::Argument, "empty batch");
  const auto& f = patches.front();
  Batch<float> b(static_cast<int>(patches.size()), f.bands, f.height, f.width);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    require(patches[i].bands == f.bands && patches[i].height == f.height && patches[i].width == f.width,
            ErrorKind::Argument, "batch patches differ in shape");
    std::copy(patches[i].values.begin(), patches[i].values.end(), b.sample(static_cast<int>(i)));
  }
  return b;
}

ProbabilityMap cloud_probability(const Batch<float>& logits, int index) {
  ProbabilityMap out(logits.height, logits.width);
  const float* z = logits.sample(index);
  const std::size_t plane = out.size();
  for (std::size_t i = 0; i < plane; ++i) {
    const double d = static_cast<double>(z[i]) - static_cast<double>(z[plane + i]);
    out.values[i] = static_cast<float>(1.0 / (1.0 + std::exp(d)));
  }
  return out;
}

ProbabilityMap predict_patch(const UNetModel& model, const MultiBandPatch& normalized) {
  const auto& c = model.config();
  require(normalized.bands == c.in_channels, ErrorKind::Argument, "predict: band count mismatch");
  auto logits = model.forward(to_batch(std::span<const MultiBandPatch>(&normalized, 1)));
  return cloud_probability(logits, 0);
}

ProbabilityMap ensemble_mean(std::span<const ProbabilityMap> maps) {
  require(!maps.empty(), ErrorKind::Argument, "ensemble_mean of an empty list");
  std::vector<double> acc(maps.front().size(), 0.0);
  for (const auto& m : maps) {
    require(m.same_shape(maps.front()), ErrorKind::Argument, "ensemble_mean: shapes differ");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values[i];
  }
  ProbabilityMap out(maps.front().height, maps.front().width);
  const double n = static_cast<double>(maps.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(std::clamp(acc[i] / n, 0.0, 1.0));
  return out;
}

ProbabilityMap sliding_window_predict(const EnsembleModel& ensemble, const MultiBandPatch& scene, double overlap,
                                      Blend blend) {
  const auto& c = ensemble.config();
  const int ph = c.patch_height, pw = c.patch_width;
  if (scene.height < ph || scene.width < pw) {
    MultiBandPatch padded(scene.bands, std::max(scene.height, ph), std::max(scene.width, pw));
    padded.scene_id = scene.scene_id;
    for (int b = 0; b < scene.bands; ++b)
      for (int y = 0; y < scene.height; ++y)
        for (int x = 0; x < scene.width; ++x) padded.at(b, y, x) = scene.at(b, y, x);
    auto full = sliding_window_predict(ensemble, padded, overlap, blend);
    ProbabilityMap out;
    static_cast<Grid2D<float>&>(out) = crop(static_cast<const Grid2D<float>&>(full), {0, 0}, scene.height, scene.width);
    return out;
  }
  auto [patches, grid] = split_scene(scene, ph, pw, overlap);
  std::vector<ProbabilityMap> fused;
  fused.reserve(patches.size());
  for (const auto& p : patches) {
    std::vector<ProbabilityMap> per_member;
    for (const auto& m : ensemble.members()) per_member.push_back(predict_patch(m, p));
    fused.push_back(ensemble_mean(per_member));
  }
  return stitch_scene(fused, grid, blend);
}

CloudMask binarize(const ProbabilityMap& map, double tau) {
  require(tau > 0.0 && tau < 1.0, ErrorKind::Argument, "threshold must be in (0,1)");
  CloudMask m(map.height, map.width);
  for (std::size_t i = 0; i < map.size(); ++i) m.values[i] = map.values[i] >= tau ? 1 : 0;
  return m;
}

}  // namespace cloudseg
