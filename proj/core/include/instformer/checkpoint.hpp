#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "instformer/model.hpp"

namespace instformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary image of a model: ModelConfig, decoder flag and every named parameter tensor.
std::vector<std::uint8_t> serialize_checkpoint(const AssemblyModel& model);
AssemblyModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const AssemblyModel& model, const std::string& path);
AssemblyModel load_checkpoint(const std::string& path);

}  // namespace instformer
