#pragma once

// Run manifest: resolved config, seed, build version and the command line,
// written as manifest.json plus config.ini beside a run's outputs.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "mmjigsaw/io/binary.hpp"
#include "mmjigsaw/io/config.hpp"

#ifndef MMJIGSAW_GIT_DESCRIBE
#define MMJIGSAW_GIT_DESCRIBE "unknown"
#endif

namespace mmjigsaw {

inline constexpr const char* kBuildVersion = MMJIGSAW_GIT_DESCRIBE;

// MMJIGSAW_OUT, when set and non-empty, replaces the requested directory.
inline std::filesystem::path resolve_output_dir(const std::filesystem::path& requested) {
  if (const char* env = std::getenv("MMJIGSAW_OUT"); env && *env) return env;
  return requested;
}

inline nlohmann::ordered_json config_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_entries(cfg)) j[k] = v;
  return j;
}

inline nlohmann::ordered_json make_manifest(const ExperimentConfig& cfg, const std::string& command,
                                            const std::vector<std::string>& args) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["args"] = args;
  j["seed"] = cfg.seed;
  j["build"] = kBuildVersion;
  j["config"] = config_json(cfg);
  j["config_ini"] = to_ini(cfg);
  return j;
}

// Config stored in a manifest, for re-running.
inline ExperimentConfig manifest_config(const nlohmann::json& manifest) {
  if (!manifest.contains("config_ini") || !manifest["config_ini"].is_string()) {
    throw ConfigError("manifest has no config_ini string");
  }
  return parse_config(manifest["config_ini"].get<std::string>());
}

inline void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& command,
                           const std::vector<std::string>& args) {
  write_text_atomic(dir / "manifest.json", make_manifest(cfg, command, args).dump(2) + "\n");
  write_text_atomic(dir / "config.ini", to_ini(cfg));
}

}  // namespace mmjigsaw
