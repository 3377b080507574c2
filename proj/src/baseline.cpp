#include "cloudseg/baseline.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace cloudseg {

CloudMask band_threshold(const Grid2D<float>& band, double tau) {
  require(std::isfinite(tau), ErrorKind::Argument, "threshold must be finite");
  CloudMask m(band.height, band.width);
  for (std::size_t i = 0; i < band.size(); ++i) m.values[i] = band.values[i] >= tau ? 1 : 0;
  return m;
}

double otsu_threshold(const Grid2D<float>& band) {
  require(band.size() > 0, ErrorKind::Argument, "Otsu on an empty band");
  auto [lo_it, hi_it] = std::minmax_element(band.values.begin(), band.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return lo;
  constexpr int kBins = 256;
  const double width = (hi - lo) / kBins;
  std::array<double, kBins> hist{};
  for (float v : band.values) ++hist[std::min(kBins - 1, static_cast<int>((v - lo) / width))];
  const double total = static_cast<double>(band.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += hist[k];
    sum0 += k * hist[k];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = k;
    }
  }
  return lo + (best_bin + 1) * width;
}

}  // namespace cloudseg
