#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace cloudseg {

using json = nlohmann::json;

// Sorted keys, two-space indent, floats printed with 9 significant digits.
std::string canonical_json(const json& j);
// Same ordering and number format on a single line (JSON-lines records).
std::string canonical_json_line(const json& j);
void write_canonical_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

std::string format_g9(double v);

// FNV-1a 64-bit over the bytes, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace cloudseg
