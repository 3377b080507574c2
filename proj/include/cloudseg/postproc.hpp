#pragma once

#include <array>
#include <string>

#include "cloudseg/raster.hpp"

namespace cloudseg {

// 3x3 binary neighbourhood, row-major; the centre must be set.
struct StructuringElement {
  std::array<bool, 9> cells{true, true, true, true, true, true, true, true, true};

  static StructuringElement square() { return {}; }
  static StructuringElement cross() { return {{false, true, false, true, true, true, false, true, false}}; }
  bool at(int dy, int dx) const { return cells[(dy + 1) * 3 + (dx + 1)]; }
  void validate() const;
};

enum class MorphOp { Erode, Dilate, Open, Close };

// Dilation treats outside pixels as clear; erosion ignores them. The pair is dual
// under complement with swapped border values.
CloudMask morph(const CloudMask& mask, MorphOp op, const StructuringElement& se = StructuringElement::square());

// Close when strictly more than half the pixels are cloud, open otherwise.
CloudMask adaptive_postprocess(const CloudMask& mask, const StructuringElement& se = StructuringElement::square());

enum class PostRule { None, Open, Close, Adaptive };

PostRule parse_post_rule(const std::string& s);
std::string to_string(PostRule r);
CloudMask apply_post_rule(const CloudMask& mask, PostRule rule);

}  // namespace cloudseg
