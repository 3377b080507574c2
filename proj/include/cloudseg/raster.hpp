#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloudseg/error.hpp"
#include "cloudseg/tensor.hpp"

namespace cloudseg {

// Dense single-channel H x W raster, row-major.
template <class T>
struct Grid2D {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid2D() = default;
  Grid2D(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  Grid2D(int h, int w, std::vector<T> v) : height(h), width(w), values(std::move(v)) {
    require(values.size() == static_cast<std::size_t>(h) * w, ErrorKind::Argument, "raster size mismatch");
  }

  T& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  const T& operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  bool same_shape(const auto& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

// Binary mask: 0 = clear, 1 = cloud.
struct CloudMask : Grid2D<std::uint8_t> {
  using Grid2D::Grid2D;
  std::size_t cloud_count() const;
  double cloud_fraction() const;
};

// Per-pixel P(cloud) in [0,1].
struct ProbabilityMap : Grid2D<float> {
  using Grid2D::Grid2D;
};

// B x H x W reflectance stack, band-major.
struct MultiBandPatch {
  std::string patch_id;
  std::string scene_id;
  int bands = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  MultiBandPatch() = default;
  MultiBandPatch(int b, int h, int w, std::vector<float> v = {});

  float& at(int b, int y, int x) { return values[(static_cast<std::size_t>(b) * height + y) * width + x]; }
  float at(int b, int y, int x) const { return values[(static_cast<std::size_t>(b) * height + y) * width + x]; }
  std::span<float> band(int b) { return {values.data() + static_cast<std::size_t>(b) * height * width, plane()}; }
  std::span<const float> band(int b) const {
    return {values.data() + static_cast<std::size_t>(b) * height * width, plane()};
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  void validate() const;
};

struct PatchOffset {
  int y = 0;
  int x = 0;
  friend bool operator==(const PatchOffset&, const PatchOffset&) = default;
};

struct PatchGrid {
  std::string scene_id;
  int scene_height = 0;
  int scene_width = 0;
  int patch_height = 0;
  int patch_width = 0;
  int stride_y = 0;
  int stride_x = 0;
  std::vector<PatchOffset> offsets;  // row-major
};

enum class Blend { Uniform, Gaussian };

Blend parse_blend(const std::string& s);
std::string to_string(Blend b);

// Offsets along one axis: multiples of the stride, last one clamped to extent - patch.
std::vector<int> axis_offsets(int extent, int patch, int stride);

PatchGrid make_patch_grid(int scene_h, int scene_w, int patch_h, int patch_w, double overlap_fraction);

std::pair<std::vector<MultiBandPatch>, PatchGrid> split_scene(const MultiBandPatch& scene, int patch_h, int patch_w,
                                                              double overlap_fraction);

template <class T>
Grid2D<T> crop(const Grid2D<T>& src, PatchOffset off, int h, int w) {
  require(off.y >= 0 && off.x >= 0 && off.y + h <= src.height && off.x + w <= src.width, ErrorKind::Argument,
          "crop window outside raster");
  Grid2D<T> out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = src(off.y + y, off.x + x);
  return out;
}

MultiBandPatch crop(const MultiBandPatch& src, PatchOffset off, int h, int w);

// Separable Gaussian, sigma = size/8 per axis, peak 1, floor-clamped at 1e-3.
Grid2D<float> gaussian_weights(int patch_h, int patch_w);

ProbabilityMap stitch_scene(std::span<const ProbabilityMap> maps, const PatchGrid& grid, Blend blend);

// Binary P6 pixmap.
struct Pixmap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // H x W x 3

  std::vector<std::uint8_t> encode() const;
};

// Per-band 2nd..98th percentile stretch to 0..255.
Pixmap stretch_composite(const MultiBandPatch& rgb);
Pixmap compose_overlay(const MultiBandPatch& rgb, const CloudMask& mask, const CloudMask* gt = nullptr);
void render_overlay(const MultiBandPatch& rgb, const CloudMask& mask, const std::optional<CloudMask>& gt,
                    const std::filesystem::path& path);

// Tensor conversions used by every file-backed stage.
Tensor to_tensor(const CloudMask& m);
Tensor to_tensor(const ProbabilityMap& m);
CloudMask mask_from_tensor(const Tensor& t);
ProbabilityMap probability_from_tensor(const Tensor& t);
// Accepts [H,W] or [1,H,W].
Grid2D<float> band_from_tensor(const Tensor& t);

}  // namespace cloudseg
