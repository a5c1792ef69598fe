#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "memo/cnn.hpp"

namespace memo {

std::string config_to_json(const CnnConfig& config);
/// Unknown keys and type mismatches raise ConfigError; missing keys keep defaults.
CnnConfig config_from_json(const std::string& text);

struct Checkpoint {
  CnnConfig config;
  std::size_t epoch = 0;
  std::vector<float> params;
};

/// "MTCK", u32 version, u32 length + config JSON, u64 parameter count, f32 LE parameters
/// in tensor declaration order.
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Rebuilds a float model from a checkpoint; the parameter count must match the config.
Cnn<float> model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace memo
