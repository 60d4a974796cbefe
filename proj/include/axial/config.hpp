#pragma once

// Flat `key = value` experiment configs. '#' starts a comment; blank lines
// are ignored. Unknown keys and malformed values raise UsageError naming
// the key and line.

#include <filesystem>
#include <string>

#include "axial/model.hpp"
#include "axial/serialize.hpp"
#include "axial/trainer.hpp"

namespace axial {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DType dtype = DType::real64;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

}  // namespace axial
