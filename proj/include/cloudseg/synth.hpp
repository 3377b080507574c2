#pragma once

#include <cstdint>
#include <filesystem>

#include "cloudseg/manifest.hpp"

namespace cloudseg {

struct SynthSpec {
  int n_scenes = 10;
  int height = 128;
  int width = 128;
  int bands = 4;
  double density = 0.3;
  double haze_fraction = 0.2;
  double noise_std = 0.01;
  std::uint64_t seed = 0;
  int patch = 0;  // 0 = one patch per scene

  void validate() const;
};

inline constexpr double kThickCloudBoost = 0.45;
inline constexpr double kHazeStrength = 0.35;
inline constexpr double kDnScale = 10000.0;
inline constexpr int kBlobCell = 32;  // cloud-field lattice spacing in pixels

struct SynthScene {
  MultiBandPatch reflectance;  // [0,1]
  CloudMask mask;
  CloudMask haze;  // subset of mask
};

// Smooth value noise in [0,1] with lattice spacing `cell`.
Grid2D<float> value_noise(int h, int w, int cell, std::uint64_t seed);

SynthScene generate_scene(const SynthSpec& spec, int index);

// Writes u16 DN band tensors, u8 masks and manifest.jsonl under out_dir.
Manifest generate_synthetic_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace cloudseg
