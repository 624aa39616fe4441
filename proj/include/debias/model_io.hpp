#pragma once

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "debias/classifier.hpp"

namespace debias {

// Model container, little-endian:
//   magic "DBLMODEL" | u32 version (1) | u64 config hash |
//   u32 len + config JSON | u32 len + architecture JSON |
//   u32 tensor count | per tensor: u32 len + name, u64 n, n x f32
// The hash is FNV-1a 64 of the config JSON text and is checked on load.

void save_model(const std::filesystem::path& path, Classifier& model, const nlohmann::json& config);

struct LoadedModel {
  std::unique_ptr<Classifier> model;
  nlohmann::json config;
  std::uint64_t config_hash = 0;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace debias
