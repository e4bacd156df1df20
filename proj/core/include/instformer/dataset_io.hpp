#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "instformer/sample.hpp"

namespace instformer {

inline constexpr std::uint32_t kDatasetVersion = 1;

/// Versioned container with one checksummed record per sample. Points are stored as little-endian
/// 32-bit floats, poses and contact points as 64-bit floats.
/// Throws VersionMismatch, TruncatedFile or ChecksumMismatch (naming the record); never returns a
/// partially decoded dataset.
std::vector<std::uint8_t> serialize_dataset(const std::vector<AssemblySample>& samples);
std::vector<AssemblySample> deserialize_dataset(const std::vector<std::uint8_t>& bytes);

void save_dataset(const std::vector<AssemblySample>& samples, const std::string& path);
std::vector<AssemblySample> load_dataset(const std::string& path);

/// Human-readable JSON listing counts per split and category.
std::string dataset_manifest(const std::vector<AssemblySample>& samples);

std::vector<AssemblySample> filter_split(const std::vector<AssemblySample>& samples, Split split);

}  // namespace instformer
