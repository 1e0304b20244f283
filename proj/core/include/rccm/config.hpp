#pragma once

#include <filesystem>

#include "rccm/training.hpp"

namespace rccm::config {

// Loads a training config from a .json or .toml file (dispatch on extension,
// falling back to content sniffing). Unknown keys are rejected nowhere;
// missing keys take defaults.
training::TrainConfig load_train_config(const std::filesystem::path& path);

// Minimal TOML reader covering the subset used by the config files:
// [section.sub] tables, key = value with strings, integers, floats, booleans
// and flat arrays. Returns the equivalent JSON object.
nlohmann::json toml_to_json(const std::string& text);

}  // namespace rccm::config
