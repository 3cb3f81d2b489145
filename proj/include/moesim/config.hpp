#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/model.hpp"

namespace moesim {

inline constexpr const char* kConfigSchema = "moesim.config.v1";

// Built-in presets: "mixtral-8x7b" and "phi3.5-moe" on a 24 GiB RTX 4090 /
// Threadripper 7960X host.
std::vector<std::string> preset_names();
SystemConfig preset(const std::string& name);

// Reads and validates a JSON config document. Throws ConfigError naming the
// offending key on any missing or invalid field.
SystemConfig load_config(const std::filesystem::path& path);
SystemConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const SystemConfig& config);

}  // namespace moesim
