#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cloudseg/fingerprint.hpp"
#include "cloudseg/raster.hpp"

namespace cloudseg {

inline constexpr int kMaxDownsamplings = 5;
inline constexpr int kMinFeatureSize = 8;
inline constexpr int kMinShrunkPatch = 64;

struct MemoryBudget {
  std::uint64_t bytes_available = 24ull << 30;
  double safety_factor = 0.85;

  double limit() const { return safety_factor * static_cast<double>(bytes_available); }
};

// Complete architecture / training / inference plan derived from a fingerprint.
struct PipelineConfig {
  int in_channels = 4;
  int n_classes = 2;
  int patch_height = 0;
  int patch_width = 0;
  int batch_size = 2;
  int n_downsamplings = 0;
  int base_channels = 32;
  int channel_cap = 512;
  std::vector<int> channels;  // one entry per encoder stage, d + 1 entries
  int n_folds = 5;
  int epochs = 1000;
  int batches_per_epoch = 50;
  double lr0 = 0.01;
  double momentum = 0.99;
  std::string normalization = "clip_zscore_dataset";
  bool ensemble = true;
  Blend blend = Blend::Gaussian;
  double overlap = 0.5;
  double threshold = 0.5;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

// Desk-scale presets; anything unset follows the rule engine.
struct ConfigOverrides {
  std::optional<int> base_channels;
  std::optional<int> epochs;
  std::optional<int> batches_per_epoch;
  std::optional<int> batch_size;
  std::optional<int> patch_size;  // square training/inference patch instead of the median shape
};

struct ConfiguredPipeline {
  PipelineConfig config;
  std::vector<std::string> trace;
};

std::vector<int> stage_channels(int base, int cap, int d);

// Checks every PipelineConfig invariant; throws Argument on violation.
void validate_config(const PipelineConfig& c);

ConfiguredPipeline configure_pipeline(const DatasetFingerprint& f, const MemoryBudget& b, int folds,
                                      const ConfigOverrides& overrides = {});

// Parameter tensor of the U-Net in construction order.
struct ParamSpec {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::uint64_t fan_in = 0;  // 0 for biases and norm parameters
  enum class Init { HeNormal, Zero, One } init = Init::Zero;

  std::uint64_t count() const;
};

std::vector<ParamSpec> parameter_layout(const PipelineConfig& c);
std::uint64_t conv_param_count(std::uint64_t in_ch, std::uint64_t out_ch, std::uint64_t kernel, bool bias);
std::uint64_t count_parameters(const PipelineConfig& c);

std::uint64_t activation_bytes(const PipelineConfig& c, std::uint64_t batch);
std::uint64_t estimate_memory(const PipelineConfig& c, std::uint64_t batch);

json to_json(const PipelineConfig& c);
PipelineConfig config_from_json(const json& j);
std::string config_hash(const PipelineConfig& c);

}  // namespace cloudseg
