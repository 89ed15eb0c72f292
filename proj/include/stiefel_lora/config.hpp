#pragma once

#include <string>

#include <json.hpp>

#include "stiefel_lora/harness.hpp"

namespace stiefel_lora {

/// Builds a RunConfig from a JSON object. Missing keys keep their defaults;
/// unknown keys, wrong types and out-of-range values throw ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);

/// Reads and parses a JSON config file, then validates it.
RunConfig load_run_config(const std::string& path);

nlohmann::json to_json(const RunConfig& config);

}  // namespace stiefel_lora
