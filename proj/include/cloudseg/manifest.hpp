#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cloudseg/raster.hpp"

namespace cloudseg {

struct ManifestRecord {
  std::string patch_id;
  std::string scene_id;
  std::vector<std::string> band_paths;  // relative to the manifest directory unless absolute
  std::optional<std::string> mask_path;
  int grid_row = 0;
  int grid_col = 0;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const std::string& p) const;
};

// JSON-lines, one record per line.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

MultiBandPatch load_patch(const Manifest& m, const ManifestRecord& r);
std::optional<CloudMask> load_mask(const Manifest& m, const ManifestRecord& r);

// In-memory patch with optional ground truth, the currency of fingerprint/train/infer.
struct LabeledPatch {
  MultiBandPatch image;
  std::optional<CloudMask> mask;
};

std::vector<LabeledPatch> load_all(const Manifest& m);

}  // namespace cloudseg
