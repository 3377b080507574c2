#include "cloudseg/json_util.hpp"

#include <cmath>
#include <cstdio>

#include "cloudseg/error.hpp"
#include "cloudseg/tensor.hpp"

namespace cloudseg {

std::string format_g9(double v) {
  require(std::isfinite(v), ErrorKind::Numeric, "non-finite value in canonical JSON");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  std::string s(buf);
  // Keep floats recognisable as floats after a round trip.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

namespace {

void emit(const json& j, std::string& out, int depth, bool pretty = true) {
  auto indent = [&](int d) {
    if (pretty) out.append(static_cast<std::size_t>(2 * d), ' ');
  };
  const char* nl = pretty ? "\n" : "";
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{";
      out += nl;
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map order = sorted keys
        if (!first) {
          out += ",";
          if (!pretty) out += " ";
          out += nl;
        }
        first = false;
        indent(depth + 1);
        out += json(it.key()).dump();
        out += ": ";
        emit(it.value(), out, depth + 1, pretty);
      }
      out += nl;
      indent(depth);
      out += "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ", ";
        first = false;
        emit(v, out, depth, pretty);
      }
      out += "]";
      return;
    }
    case json::value_t::number_float: out += format_g9(j.get<double>()); return;
    default: out += j.dump(); return;
  }
}

}  // namespace

std::string canonical_json(const json& j) {
  std::string out;
  emit(j, out, 0);
  out += "\n";
  return out;
}

std::string canonical_json_line(const json& j) {
  std::string out;
  emit(j, out, 0, false);
  return out;
}

void write_canonical_json(const std::filesystem::path& path, const json& j) {
  write_text_atomic(path, canonical_json(j));
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Format, path.string() + ": " + e.what());
  }
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cloudseg
