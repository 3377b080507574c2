#pragma once

#include "cloudseg/raster.hpp"

namespace cloudseg {

// mask = 1 where band >= tau.
CloudMask band_threshold(const Grid2D<float>& band, double tau);

// Otsu's threshold over a 256-bin histogram spanning [min, max]; returns the upper
// edge of the last background bin (min for a constant band).
double otsu_threshold(const Grid2D<float>& band);

}  // namespace cloudseg
