#pragma once
// Brute-force reference implementations and random generators shared by the unit
// tests and the acceptance runner. Deliberately naive: loops over pixels, subsets
// and neighborhoods, no shared code with the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "cloudseg/raster.hpp"

namespace oracle {

using cloudseg::CloudMask;

struct Gen {
  std::mt19937_64 eng;
  explicit Gen(std::uint64_t seed) : eng(seed) {}

  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  bool coin(double p = 0.5) { return uniform() < p; }

  // Mixture of densities, including the all-clear / all-cloud edge cases.
  CloudMask mask(int h, int w) {
    CloudMask m(h, w);
    const int mode = uniform_int(0, 5);
    const double p = mode == 0 ? 0.0 : mode == 1 ? 1.0 : uniform();
    for (auto& v : m.values) v = coin(p) ? 1 : 0;
    return m;
  }

  // A few random rectangles: connected structure for morphology and stitching tests.
  CloudMask blobs(int h, int w) {
    CloudMask m(h, w);
    const int n = uniform_int(0, 4);
    for (int k = 0; k < n; ++k) {
      const int y0 = uniform_int(0, h - 1), x0 = uniform_int(0, w - 1);
      const int y1 = std::min(h, y0 + uniform_int(1, h / 2)), x1 = std::min(w, x0 + uniform_int(1, w / 2));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m(y, x) = 1;
    }
    for (auto& v : m.values)
      if (coin(0.03)) v ^= 1;
    return m;
  }
};

struct Counts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts count(const CloudMask& pred, const CloudMask& gt) {
  Counts c;
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      const bool p = pred(y, x) != 0, g = gt(y, x) != 0;
      if (p && g) ++c.tp;
      else if (p) ++c.fp;
      else if (g) ++c.fn;
      else ++c.tn;
    }
  return c;
}

inline std::optional<double> ratio(long num, long den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

struct Metrics {
  std::optional<double> ji, pr, re, spe, oa;
};

inline Metrics metrics(const Counts& c) {
  return {ratio(c.tp, c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn),
          ratio(c.tn, c.tn + c.fp), ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn)};
}

// 3x3 (or any odd square) neighborhoods; out-of-image pixels never contribute.
inline CloudMask erode(const CloudMask& m, int k = 3, bool cross = false) {
  CloudMask out(m.height, m.width);
  const int r = k / 2;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool all = true;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (cross && dy != 0 && dx != 0) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width) continue;
          if (!m(yy, xx)) all = false;
        }
      out(y, x) = all ? 1 : 0;
    }
  return out;
}

inline CloudMask dilate(const CloudMask& m, int k = 3, bool cross = false) {
  CloudMask out(m.height, m.width);
  const int r = k / 2;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool any = false;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (cross && dy != 0 && dx != 0) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width) continue;
          if (m(yy, xx)) any = true;
        }
      out(y, x) = any ? 1 : 0;
    }
  return out;
}

inline CloudMask open(const CloudMask& m) { return dilate(erode(m)); }
inline CloudMask close(const CloudMask& m) { return erode(dilate(m)); }

inline CloudMask adaptive(const CloudMask& m) {
  long cloud = 0;
  for (auto v : m.values) cloud += v ? 1 : 0;
  const double frac = static_cast<double>(cloud) / static_cast<double>(m.values.size());
  return frac > 0.5 ? close(m) : open(m);
}

// Two-tailed exact Wilcoxon p by enumerating every sign assignment of the ranks.
inline double wilcoxon_enumerate(const std::vector<double>& diffs) {
  std::vector<double> nz;
  for (double d : diffs)
    if (d != 0.0) nz.push_back(d);
  const std::size_t n = nz.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(nz[j]) < std::abs(nz[i])) less += 1;
      if (std::abs(nz[j]) == std::abs(nz[i])) equal += 1;
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (nz[i] > 0) observed += rank[i];
  double le = 0, ge = 0;
  const std::uint64_t all = 1ull << n;
  for (std::uint64_t mask = 0; mask < all; ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += rank[i];
    if (w <= observed + 1e-9) le += 1;
    if (w >= observed - 1e-9) ge += 1;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / static_cast<double>(all));
}

// Mean |p - gt| over pixels within `band` px of a seam of the non-overlapping tiling
// (tile boundaries at multiples of the patch size).
inline double seam_band_error(const cloudseg::ProbabilityMap& p, const CloudMask& gt, int patch_h, int patch_w,
                              int band = 8) {
  double sum = 0;
  long n = 0;
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      bool near = false;
      for (int s = patch_h; s < p.height; s += patch_h) near |= std::abs(y - s) < band || std::abs(y + 1 - s) < band;
      for (int s = patch_w; s < p.width; s += patch_w) near |= std::abs(x - s) < band || std::abs(x + 1 - s) < band;
      if (!near) continue;
      sum += std::abs(p(y, x) - (gt(y, x) ? 1.0 : 0.0));
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace oracle
