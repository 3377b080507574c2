#include "cloudseg/fingerprint.hpp"

#include <algorithm>
#include <cmath>

namespace cloudseg {

json to_json(const DatasetFingerprint& f) {
  json bands = json::array();
  for (const auto& b : f.bands)
    bands.push_back({{"mean", b.mean}, {"std", b.std}, {"p0_5", b.p0_5}, {"p99_5", b.p99_5}});
  return {{"n_patches", f.n_patches},
          {"band_count", f.band_count},
          {"median_shape", {f.median_height, f.median_width}},
          {"bands", bands},
          {"class_imbalance", f.class_imbalance}};
}

DatasetFingerprint fingerprint_from_json(const json& j) {
  try {
    DatasetFingerprint f;
    f.n_patches = j.at("n_patches").get<std::size_t>();
    f.band_count = j.at("band_count").get<int>();
    f.median_height = j.at("median_shape").at(0).get<int>();
    f.median_width = j.at("median_shape").at(1).get<int>();
    for (const auto& b : j.at("bands"))
      f.bands.push_back({b.at("mean").get<double>(), b.at("std").get<double>(), b.at("p0_5").get<double>(),
                         b.at("p99_5").get<double>()});
    f.class_imbalance = j.at("class_imbalance").get<double>();
    require(static_cast<int>(f.bands.size()) == f.band_count, ErrorKind::Consistency,
            "fingerprint band list does not match band_count");
    return f;
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed fingerprint: ") + e.what());
  }
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
  require(!values.empty(), ErrorKind::Argument, "percentile of empty set");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

DatasetFingerprint compute_fingerprint(std::span<const LabeledPatch> patches) {
  require(!patches.empty(), ErrorKind::Argument, "fingerprint of an empty manifest");
  DatasetFingerprint f;
  f.n_patches = patches.size();
  f.band_count = patches.front().image.bands;

  std::vector<int> hs, ws;
  std::size_t pixels = 0, cloud = 0;
  for (const auto& p : patches) {
    require(p.image.bands == f.band_count, ErrorKind::Consistency,
            "mixed band counts (" + p.image.patch_id + " has " + std::to_string(p.image.bands) + ")");
    require(p.mask.has_value(), ErrorKind::Consistency, "training patch " + p.image.patch_id + " has no mask");
    hs.push_back(p.image.height);
    ws.push_back(p.image.width);
    pixels += p.image.plane();
    cloud += p.mask->cloud_count();
  }
  std::sort(hs.begin(), hs.end());
  std::sort(ws.begin(), ws.end());
  f.median_height = hs[(hs.size() - 1) / 2];
  f.median_width = ws[(ws.size() - 1) / 2];
  f.class_imbalance = static_cast<double>(cloud) / static_cast<double>(pixels);

  const std::size_t step = pixels > kPercentileSampleTarget
                               ? (pixels + kPercentileSampleTarget - 1) / kPercentileSampleTarget
                               : 1;
  for (int b = 0; b < f.band_count; ++b) {
    double sum = 0.0;
    for (const auto& p : patches)
      for (float v : p.image.band(b)) sum += v;
    const double mean = sum / static_cast<double>(pixels);
    double ss = 0.0;
    std::vector<double> sample;
    sample.reserve(pixels / step + 1);
    std::size_t idx = 0;
    for (const auto& p : patches)
      for (float v : p.image.band(b)) {
        ss += (v - mean) * (v - mean);
        if (idx++ % step == 0) sample.push_back(v);
      }
    BandStats s;
    s.mean = mean;
    s.std = std::sqrt(ss / static_cast<double>(pixels));
    s.p0_5 = nearest_rank_percentile(sample, 0.5);
    s.p99_5 = nearest_rank_percentile(std::move(sample), 99.5);
    f.bands.push_back(s);
  }
  return f;
}

DatasetFingerprint compute_fingerprint(const Manifest& manifest) {
  require(!manifest.records.empty(), ErrorKind::Argument, "fingerprint of an empty manifest");
  auto patches = load_all(manifest);
  return compute_fingerprint(patches);
}

MultiBandPatch normalize_patch(const MultiBandPatch& raw, const DatasetFingerprint& f) {
  require(raw.bands == f.band_count, ErrorKind::Argument,
          "patch has " + std::to_string(raw.bands) + " bands, fingerprint " + std::to_string(f.band_count));
  MultiBandPatch out = raw;
  for (int b = 0; b < raw.bands; ++b) {
    const auto& s = f.bands[b];
    const double denom = std::max(s.std, 1e-8);
    for (float& v : out.band(b)) v = static_cast<float>((std::clamp<double>(v, s.p0_5, s.p99_5) - s.mean) / denom);
  }
  return out;
}

}  // namespace cloudseg
