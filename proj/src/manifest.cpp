#include "cloudseg/manifest.hpp"

#include <sstream>

#include "cloudseg/json_util.hpp"

namespace cloudseg {

std::filesystem::path Manifest::resolve(const std::string& p) const {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

Manifest read_manifest(const std::filesystem::path& path) {
  Manifest m;
  m.base_dir = path.parent_path();
  std::istringstream in(read_text(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      ManifestRecord r;
      r.patch_id = j.at("patch_id").get<std::string>();
      r.scene_id = j.value("scene_id", std::string{});
      r.band_paths = j.at("band_paths").get<std::vector<std::string>>();
      if (j.contains("mask_path") && !j["mask_path"].is_null()) r.mask_path = j["mask_path"].get<std::string>();
      r.grid_row = j.value("grid_row", 0);
      r.grid_col = j.value("grid_col", 0);
      require(!r.band_paths.empty(), ErrorKind::Consistency, "record without bands");
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json j = {{"patch_id", r.patch_id},     {"scene_id", r.scene_id}, {"band_paths", r.band_paths},
              {"mask_path", nullptr},       {"grid_row", r.grid_row}, {"grid_col", r.grid_col}};
    if (r.mask_path) j["mask_path"] = *r.mask_path;
    out += j.dump() + "\n";
  }
  write_text_atomic(path, out);
}

MultiBandPatch load_patch(const Manifest& m, const ManifestRecord& r) {
  MultiBandPatch p;
  p.patch_id = r.patch_id;
  p.scene_id = r.scene_id;
  p.bands = static_cast<int>(r.band_paths.size());
  for (std::size_t b = 0; b < r.band_paths.size(); ++b) {
    auto band = band_from_tensor(load_tensor(m.resolve(r.band_paths[b])));
    if (b == 0) {
      p.height = band.height;
      p.width = band.width;
      p.values.reserve(p.plane() * r.band_paths.size());
    }
    require(band.height == p.height && band.width == p.width, ErrorKind::Consistency,
            "bands of " + r.patch_id + " differ in shape");
    p.values.insert(p.values.end(), band.values.begin(), band.values.end());
  }
  p.validate();
  return p;
}

std::optional<CloudMask> load_mask(const Manifest& m, const ManifestRecord& r) {
  if (!r.mask_path) return std::nullopt;
  return mask_from_tensor(load_tensor(m.resolve(*r.mask_path)));
}

std::vector<LabeledPatch> load_all(const Manifest& m) {
  std::vector<LabeledPatch> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    LabeledPatch lp{load_patch(m, r), load_mask(m, r)};
    if (lp.mask)
      require(lp.mask->height == lp.image.height && lp.mask->width == lp.image.width, ErrorKind::Consistency,
              "mask of " + r.patch_id + " does not match its bands");
    out.push_back(std::move(lp));
  }
  return out;
}

}  // namespace cloudseg
