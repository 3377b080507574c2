#include "cloudseg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cloudseg {

std::size_t CloudMask::cloud_count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

double CloudMask::cloud_fraction() const {
  return values.empty() ? 0.0 : static_cast<double>(cloud_count()) / static_cast<double>(values.size());
}

MultiBandPatch::MultiBandPatch(int b, int h, int w, std::vector<float> v)
    : bands(b), height(h), width(w), values(std::move(v)) {
  if (values.empty()) values.assign(static_cast<std::size_t>(b) * h * w, 0.0f);
  validate();
}

void MultiBandPatch::validate() const {
  require(bands >= 1 && height >= 1 && width >= 1, ErrorKind::Argument, "patch dims must be positive");
  require(values.size() == static_cast<std::size_t>(bands) * height * width, ErrorKind::Argument,
          "patch value count does not match B x H x W");
}

Blend parse_blend(const std::string& s) {
  if (s == "uniform") return Blend::Uniform;
  if (s == "gaussian") return Blend::Gaussian;
  fail(ErrorKind::Argument, "unknown blend '" + s + "'");
}

std::string to_string(Blend b) { return b == Blend::Uniform ? "uniform" : "gaussian"; }

std::vector<int> axis_offsets(int extent, int patch, int stride) {
  require(patch <= extent, ErrorKind::Argument, "patch larger than scene");
  require(stride >= 1, ErrorKind::Argument, "stride must be positive");
  std::vector<int> offs;
  for (int o = 0; o + patch <= extent; o += stride) offs.push_back(o);
  if (offs.back() + patch < extent) offs.push_back(extent - patch);
  return offs;
}

PatchGrid make_patch_grid(int scene_h, int scene_w, int patch_h, int patch_w, double overlap_fraction) {
  require(overlap_fraction >= 0.0 && overlap_fraction < 1.0, ErrorKind::Argument, "overlap must be in [0,1)");
  require(patch_h >= 1 && patch_w >= 1, ErrorKind::Argument, "patch dims must be positive");
  require(patch_h <= scene_h && patch_w <= scene_w, ErrorKind::Argument,
          "patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) + " larger than scene " +
              std::to_string(scene_h) + "x" + std::to_string(scene_w));
  PatchGrid g;
  g.scene_height = scene_h;
  g.scene_width = scene_w;
  g.patch_height = patch_h;
  g.patch_width = patch_w;
  g.stride_y = std::max(1, static_cast<int>(std::floor(patch_h * (1.0 - overlap_fraction))));
  g.stride_x = std::max(1, static_cast<int>(std::floor(patch_w * (1.0 - overlap_fraction))));
  for (int y : axis_offsets(scene_h, patch_h, g.stride_y))
    for (int x : axis_offsets(scene_w, patch_w, g.stride_x)) g.offsets.push_back({y, x});
  return g;
}

MultiBandPatch crop(const MultiBandPatch& src, PatchOffset off, int h, int w) {
  require(off.y >= 0 && off.x >= 0 && off.y + h <= src.height && off.x + w <= src.width, ErrorKind::Argument,
          "crop window outside patch");
  MultiBandPatch out(src.bands, h, w);
  out.scene_id = src.scene_id;
  for (int b = 0; b < src.bands; ++b)
    for (int y = 0; y < h; ++y)
      std::copy_n(&src.values[(static_cast<std::size_t>(b) * src.height + off.y + y) * src.width + off.x], w,
                  &out.at(b, y, 0));
  return out;
}

std::pair<std::vector<MultiBandPatch>, PatchGrid> split_scene(const MultiBandPatch& scene, int patch_h, int patch_w,
                                                              double overlap_fraction) {
  PatchGrid grid = make_patch_grid(scene.height, scene.width, patch_h, patch_w, overlap_fraction);
  grid.scene_id = scene.scene_id;
  std::vector<MultiBandPatch> patches;
  patches.reserve(grid.offsets.size());
  for (std::size_t i = 0; i < grid.offsets.size(); ++i) {
    auto p = crop(scene, grid.offsets[i], patch_h, patch_w);
    p.patch_id = scene.scene_id + "_" + std::to_string(i);
    patches.push_back(std::move(p));
  }
  return {std::move(patches), std::move(grid)};
}

Grid2D<float> gaussian_weights(int patch_h, int patch_w) {
  auto axis = [](int n) {
    std::vector<double> w(n);
    double c = (n - 1) / 2.0;
    double sigma = n / 8.0;
    for (int i = 0; i < n; ++i) w[i] = std::exp(-0.5 * ((i - c) / sigma) * ((i - c) / sigma));
    return w;
  };
  auto wy = axis(patch_h);
  auto wx = axis(patch_w);
  double peak = *std::max_element(wy.begin(), wy.end()) * *std::max_element(wx.begin(), wx.end());
  Grid2D<float> out(patch_h, patch_w);
  for (int y = 0; y < patch_h; ++y)
    for (int x = 0; x < patch_w; ++x) out(y, x) = static_cast<float>(std::max(wy[y] * wx[x] / peak, 1e-3));
  return out;
}

ProbabilityMap stitch_scene(std::span<const ProbabilityMap> maps, const PatchGrid& grid, Blend blend) {
  require(maps.size() == grid.offsets.size(), ErrorKind::Argument,
          "stitch: " + std::to_string(maps.size()) + " maps for " + std::to_string(grid.offsets.size()) +
              " grid entries");
  const int ph = grid.patch_height, pw = grid.patch_width;
  Grid2D<float> weights = blend == Blend::Gaussian ? gaussian_weights(ph, pw) : Grid2D<float>(ph, pw, 1.0f);
  Grid2D<double> num(grid.scene_height, grid.scene_width, 0.0);
  Grid2D<double> den(grid.scene_height, grid.scene_width, 0.0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = maps[i];
    require(m.height == ph && m.width == pw, ErrorKind::Argument, "stitch: map shape does not match patch size");
    const auto off = grid.offsets[i];
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        double w = weights(y, x);
        num(off.y + y, off.x + x) += w * m(y, x);
        den(off.y + y, off.x + x) += w;
      }
  }
  ProbabilityMap out(grid.scene_height, grid.scene_width);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    require(den.values[i] > 0.0, ErrorKind::Argument, "stitch: grid leaves a pixel uncovered");
    out.values[i] = static_cast<float>(num.values[i] / den.values[i]);
  }
  return out;
}

std::vector<std::uint8_t> Pixmap::encode() const {
  std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

namespace {

double nearest_rank(std::vector<float> v, double pct) {
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

std::uint8_t blend_white(std::uint8_t v) { return static_cast<std::uint8_t>(std::lround(0.5 * (v + 255.0))); }

Pixmap overlay_panel(const Pixmap& base, const CloudMask& mask) {
  Pixmap out = base;
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    if (mask.values[i])
      for (int c = 0; c < 3; ++c) out.rgb[3 * i + c] = blend_white(out.rgb[3 * i + c]);
  return out;
}

}  // namespace

Pixmap stretch_composite(const MultiBandPatch& rgb) {
  require(rgb.bands == 3, ErrorKind::Argument, "overlay needs exactly 3 bands");
  Pixmap out{rgb.height, rgb.width, std::vector<std::uint8_t>(rgb.plane() * 3)};
  for (int b = 0; b < 3; ++b) {
    auto band = rgb.band(b);
    std::vector<float> copy(band.begin(), band.end());
    double lo = nearest_rank(copy, 2.0);
    double hi = nearest_rank(copy, 98.0);
    for (std::size_t i = 0; i < band.size(); ++i) {
      double t = hi > lo ? std::clamp((band[i] - lo) / (hi - lo), 0.0, 1.0) : 0.0;
      out.rgb[3 * i + b] = static_cast<std::uint8_t>(std::lround(255.0 * t));
    }
  }
  return out;
}

Pixmap compose_overlay(const MultiBandPatch& rgb, const CloudMask& mask, const CloudMask* gt) {
  require(mask.height == rgb.height && mask.width == rgb.width, ErrorKind::Argument,
          "overlay: mask shape does not match image");
  Pixmap base = stretch_composite(rgb);
  if (!gt) return overlay_panel(base, mask);
  require(gt->same_shape(mask), ErrorKind::Argument, "overlay: GT shape does not match mask");
  Pixmap panels[3] = {base, overlay_panel(base, *gt), overlay_panel(base, mask)};
  Pixmap out{rgb.height, rgb.width * 3, std::vector<std::uint8_t>(rgb.plane() * 9)};
  for (int y = 0; y < rgb.height; ++y)
    for (int p = 0; p < 3; ++p)
      std::copy_n(&panels[p].rgb[static_cast<std::size_t>(y) * rgb.width * 3], rgb.width * 3,
                  &out.rgb[(static_cast<std::size_t>(y) * out.width + p * rgb.width) * 3]);
  return out;
}

void render_overlay(const MultiBandPatch& rgb, const CloudMask& mask, const std::optional<CloudMask>& gt,
                    const std::filesystem::path& path) {
  write_file_atomic(path, compose_overlay(rgb, mask, gt ? &*gt : nullptr).encode());
}

Tensor to_tensor(const CloudMask& m) {
  return Tensor({static_cast<std::uint32_t>(m.height), static_cast<std::uint32_t>(m.width)}, m.values);
}

Tensor to_tensor(const ProbabilityMap& m) {
  return Tensor({static_cast<std::uint32_t>(m.height), static_cast<std::uint32_t>(m.width)}, m.values);
}

namespace {
std::pair<int, int> plane_dims(const Tensor& t) {
  const auto& d = t.dims();
  if (d.size() == 2) return {static_cast<int>(d[0]), static_cast<int>(d[1])};
  if (d.size() == 3 && d[0] == 1) return {static_cast<int>(d[1]), static_cast<int>(d[2])};
  fail(ErrorKind::Consistency, "expected a single-plane [H,W] tensor");
}
}  // namespace

CloudMask mask_from_tensor(const Tensor& t) {
  auto [h, w] = plane_dims(t);
  require(t.dtype() == DType::U8, ErrorKind::Consistency, "mask tensor must be u8");
  CloudMask m(h, w, t.values<std::uint8_t>());
  for (auto v : m.values) require(v <= 1, ErrorKind::Consistency, "mask tensor is not binary");
  return m;
}

ProbabilityMap probability_from_tensor(const Tensor& t) {
  auto [h, w] = plane_dims(t);
  require(t.dtype() == DType::F32, ErrorKind::Consistency, "probability tensor must be f32");
  return ProbabilityMap(h, w, t.values<float>());
}

Grid2D<float> band_from_tensor(const Tensor& t) {
  auto [h, w] = plane_dims(t);
  return Grid2D<float>(h, w, t.as_float());
}

}  // namespace cloudseg
