#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cloudseg/json_util.hpp"
#include "cloudseg/manifest.hpp"

namespace cloudseg {

struct BandStats {
  double mean = 0.0;
  double std = 0.0;
  double p0_5 = 0.0;
  double p99_5 = 0.0;

  friend bool operator==(const BandStats&, const BandStats&) = default;
};

// Standardized summary of a training set; drives configuration and normalization.
struct DatasetFingerprint {
  std::size_t n_patches = 0;
  int band_count = 0;
  int median_height = 0;
  int median_width = 0;
  std::vector<BandStats> bands;
  double class_imbalance = 0.0;  // cloud pixel fraction over all GT masks

  friend bool operator==(const DatasetFingerprint&, const DatasetFingerprint&) = default;
};

json to_json(const DatasetFingerprint& f);
DatasetFingerprint fingerprint_from_json(const json& j);

// Pooled percentiles are exact up to this many pixels per band, every k-th pixel beyond.
inline constexpr std::size_t kPercentileSampleTarget = 1'000'000;

double nearest_rank_percentile(std::vector<double> values, double pct);

DatasetFingerprint compute_fingerprint(std::span<const LabeledPatch> patches);
DatasetFingerprint compute_fingerprint(const Manifest& manifest);

// Clip to [p0_5, p99_5] then z-score, per band.
MultiBandPatch normalize_patch(const MultiBandPatch& raw, const DatasetFingerprint& f);

}  // namespace cloudseg
