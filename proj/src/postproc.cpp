#include "cloudseg/postproc.hpp"

namespace cloudseg {

void StructuringElement::validate() const {
  require(cells[4], ErrorKind::Argument, "structuring element centre must be set");
}

namespace {

void require_binary(const CloudMask& m) {
  for (auto v : m.values) require(v <= 1, ErrorKind::Argument, "mask is not binary");
}

CloudMask dilate(const CloudMask& m, const StructuringElement& se) {
  CloudMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int dy = -1; dy <= 1 && !v; ++dy)
        for (int dx = -1; dx <= 1 && !v; ++dx) {
          if (!se.at(dy, dx)) continue;
          // Reflected element: p is set if some p - o is set.
          const int yy = y - dy, xx = x - dx;
          if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width && m(yy, xx)) v = 1;
        }
      out(y, x) = v;
    }
  return out;
}

CloudMask erode(const CloudMask& m, const StructuringElement& se) {
  CloudMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 1;
      for (int dy = -1; dy <= 1 && v; ++dy)
        for (int dx = -1; dx <= 1 && v; ++dx) {
          if (!se.at(dy, dx)) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width && !m(yy, xx)) v = 0;
        }
      out(y, x) = v;
    }
  return out;
}

}  // namespace

CloudMask morph(const CloudMask& mask, MorphOp op, const StructuringElement& se) {
  se.validate();
  require_binary(mask);
  switch (op) {
    case MorphOp::Erode: return erode(mask, se);
    case MorphOp::Dilate: return dilate(mask, se);
    case MorphOp::Open: return dilate(erode(mask, se), se);
    case MorphOp::Close: return erode(dilate(mask, se), se);
  }
  fail(ErrorKind::Argument, "unknown morphological op");
}

CloudMask adaptive_postprocess(const CloudMask& mask, const StructuringElement& se) {
  require_binary(mask);
  return morph(mask, 2 * mask.cloud_count() > mask.size() ? MorphOp::Close : MorphOp::Open, se);
}

PostRule parse_post_rule(const std::string& s) {
  if (s == "none") return PostRule::None;
  if (s == "open") return PostRule::Open;
  if (s == "close") return PostRule::Close;
  if (s == "adaptive") return PostRule::Adaptive;
  fail(ErrorKind::Argument, "unknown post-processing rule '" + s + "'");
}

std::string to_string(PostRule r) {
  switch (r) {
    case PostRule::None: return "none";
    case PostRule::Open: return "open";
    case PostRule::Close: return "close";
    case PostRule::Adaptive: return "adaptive";
  }
  return "none";
}

CloudMask apply_post_rule(const CloudMask& mask, PostRule rule) {
  switch (rule) {
    case PostRule::None: return mask;
    case PostRule::Open: return morph(mask, MorphOp::Open);
    case PostRule::Close: return morph(mask, MorphOp::Close);
    case PostRule::Adaptive: return adaptive_postprocess(mask);
  }
  return mask;
}

}  // namespace cloudseg
