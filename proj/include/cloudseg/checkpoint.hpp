#pragma once

#include <filesystem>

#include "cloudseg/net.hpp"

namespace cloudseg {

// One CSEG f32 tensor per parameter plus index.json (config, config hash, tensor list).
void save_checkpoint(const UNetModel& model, const std::filesystem::path& dir);
UNetModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace cloudseg
