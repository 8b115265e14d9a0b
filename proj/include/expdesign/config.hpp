#pragma once

#include <string>

#include <json.hpp>

#include "expdesign/benchmark.hpp"

namespace expdesign {

inline constexpr int kConfigSchemaVersion = 1;

/// Everything a CLI command needs. Missing keys keep their defaults; unknown keys
/// and a wrong schema_version are rejected with ConfigError.
struct RunConfig {
  BenchmarkOptions run;
  std::string output_dir = "out";
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

/// Every field, defaults included.
nlohmann::json to_json(const RunConfig& cfg);
std::string dump_config(const RunConfig& cfg);

/// Design settings used by the desk and paper presets.
RunConfig desk_preset();
RunConfig paper_preset();

}  // namespace expdesign
