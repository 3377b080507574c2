#include "cloudseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cloudseg/rng.hpp"

namespace cloudseg {

void SynthSpec::validate() const {
  require(n_scenes >= 1, ErrorKind::Argument, "need at least one scene");
  require(height >= 64 && width >= 64, ErrorKind::Argument, "synthetic scenes must be at least 64x64");
  require(bands >= 1, ErrorKind::Argument, "need at least one band");
  require(density >= 0.0 && density <= 1.0, ErrorKind::Argument, "density must be in [0,1]");
  require(density <= 0.95, ErrorKind::Argument, "density above 0.95 is unsatisfiable");
  require(haze_fraction >= 0.0 && haze_fraction <= 1.0, ErrorKind::Argument, "haze fraction must be in [0,1]");
  require(noise_std >= 0.0, ErrorKind::Argument, "noise std must be >= 0");
  require(patch == 0 || (patch >= 8 && patch <= std::min(height, width)), ErrorKind::Argument,
          "patch must be 0 or between 8 and the scene size");
}

Grid2D<float> value_noise(int h, int w, int cell, std::uint64_t seed) {
  Rng rng(seed);
  // Random lattice phase: without it every scene peaks at the same pixel positions.
  const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
  const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
  const int gh = (h + oy) / cell + 2, gw = (w + ox) / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
  for (double& v : lattice) v = rng.uniform();
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  Grid2D<float> out(h, w);
  for (int y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y + oy) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = smooth(fy - y0);
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x + ox) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = smooth(fx - x0);
      auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * gw + xx]; };
      const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
      const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
      out(y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
  return out;
}

namespace {

Grid2D<float> fractal(int h, int w, int cell, std::uint64_t seed) {
  auto a = value_noise(h, w, cell, derive_seed(seed, 0));
  auto b = value_noise(h, w, std::max(2, cell / 2), derive_seed(seed, 1));
  for (std::size_t i = 0; i < a.size(); ++i) a.values[i] = (2.0f * a.values[i] + b.values[i]) / 3.0f;
  return a;
}

// Marks the `count` highest-valued pixels among `eligible` (all when null).
CloudMask top_pixels(const Grid2D<float>& field, std::size_t count, const CloudMask* eligible) {
  CloudMask m(field.height, field.width);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < field.size(); ++i)
    if (!eligible || eligible->values[i]) idx.push_back(i);
  count = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return field.values[a] != field.values[b] ? field.values[a] > field.values[b] : a < b;
                    });
  for (std::size_t i = 0; i < count; ++i) m.values[idx[i]] = 1;
  return m;
}

}  // namespace

SynthScene generate_scene(const SynthSpec& spec, int index) {
  spec.validate();
  const std::uint64_t seed = derive_seed(spec.seed, static_cast<std::uint64_t>(index));
  const int h = spec.height, w = spec.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  SynthScene s;
  s.reflectance = MultiBandPatch(spec.bands, h, w);
  char id[32];
  std::snprintf(id, sizeof id, "scene%03d", index);
  s.reflectance.scene_id = id;
  s.reflectance.patch_id = id;

  // Fixed lattice so cloud size does not depend on scene extent.
  const int blob_cell = kBlobCell;
  auto cloud_field = fractal(h, w, blob_cell, derive_seed(seed, 10));
  s.mask = top_pixels(cloud_field, static_cast<std::size_t>(std::llround(spec.density * static_cast<double>(n))),
                      nullptr);
  auto haze_field = value_noise(h, w, std::max(4, blob_cell / 2), derive_seed(seed, 11));
  s.haze = top_pixels(haze_field,
                      static_cast<std::size_t>(std::llround(spec.haze_fraction * static_cast<double>(s.mask.cloud_count()))),
                      &s.mask);

  auto common = fractal(h, w, 32, derive_seed(seed, 20));
  auto texture = value_noise(h, w, 8, derive_seed(seed, 21));
  Rng noise(derive_seed(seed, 30));
  for (int b = 0; b < spec.bands; ++b) {
    auto own = fractal(h, w, 16, derive_seed(seed, 100 + static_cast<std::uint64_t>(b)));
    const double base = b == 3 ? 0.25 : 0.08 + 0.02 * b;
    auto band = s.reflectance.band(b);
    for (std::size_t i = 0; i < n; ++i) {
      double v = base + 0.15 * (0.6 * common.values[i] + 0.4 * own.values[i]);
      if (s.mask.values[i]) {
        const double boost = kThickCloudBoost * (0.85 + 0.15 * texture.values[i]);
        v += s.haze.values[i] ? kHazeStrength * boost : boost;
      }
      v += spec.noise_std * noise.normal();
      band[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return s;
}

Manifest generate_synthetic_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "bands");
  std::filesystem::create_directories(out_dir / "masks");
  Manifest manifest;
  manifest.base_dir = out_dir;
  const int ph = spec.patch ? spec.patch : spec.height;
  const int pw = spec.patch ? spec.patch : spec.width;
  for (int i = 0; i < spec.n_scenes; ++i) {
    auto scene = generate_scene(spec, i);
    auto grid = make_patch_grid(spec.height, spec.width, ph, pw, 0.0);
    const auto cols = axis_offsets(spec.width, pw, grid.stride_x).size();
    for (std::size_t g = 0; g < grid.offsets.size(); ++g) {
      const auto off = grid.offsets[g];
      ManifestRecord r;
      r.scene_id = scene.reflectance.scene_id;
      r.grid_row = static_cast<int>(g / cols);
      r.grid_col = static_cast<int>(g % cols);
      r.patch_id = spec.patch ? r.scene_id + "_r" + std::to_string(r.grid_row) + "_c" + std::to_string(r.grid_col)
                              : r.scene_id;
      auto img = crop(scene.reflectance, off, ph, pw);
      for (int b = 0; b < spec.bands; ++b) {
        std::vector<std::uint16_t> dn(img.plane());
        auto band = img.band(b);
        for (std::size_t k = 0; k < dn.size(); ++k)
          dn[k] = static_cast<std::uint16_t>(std::lround(static_cast<double>(band[k]) * kDnScale));
        const std::string rel = "bands/" + r.patch_id + "_B" + std::to_string(b) + ".cseg";
        save_tensor(Tensor({static_cast<std::uint32_t>(ph), static_cast<std::uint32_t>(pw)}, std::move(dn)),
                    out_dir / rel);
        r.band_paths.push_back(rel);
      }
      CloudMask m;
      static_cast<Grid2D<std::uint8_t>&>(m) = crop(static_cast<const Grid2D<std::uint8_t>&>(scene.mask), off, ph, pw);
      const std::string mrel = "masks/" + r.patch_id + ".cseg";
      save_tensor(to_tensor(m), out_dir / mrel);
      r.mask_path = mrel;
      manifest.records.push_back(std::move(r));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", manifest.records);
  return manifest;
}

}  // namespace cloudseg
