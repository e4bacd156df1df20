#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "instformer/geom.hpp"
#include "instformer/sample.hpp"

namespace instformer {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Parameter ranges of the procedural furniture families. Lengths are in generator units before the
/// whole shape is normalized to a unit bounding box.
struct GeneratorSpec {
  Category category = Category::chair;
  std::size_t n_pc = 128;
  std::uint64_t seed = 0;
  /// Dense surface samples per part before furthest point sampling, as a multiple of n_pc.
  std::size_t oversample = 8;

  // chair
  Range seat_width{0.42, 0.56};
  Range seat_depth{0.44, 0.56};
  Range seat_thickness{0.04, 0.07};
  Range leg_length{0.36, 0.50};
  Range leg_width{0.035, 0.06};
  Range back_height{0.22, 0.32};
  Range back_thickness{0.03, 0.05};
  Range back_tilt{0.0, 0.25};  // radians
  Range arm_height{0.18, 0.26};
  Range arm_width{0.03, 0.05};
  double arm_probability = 0.5;  // per side

  // table
  Range top_width{0.80, 1.20};
  Range top_depth{0.45, 0.60};
  Range top_thickness{0.03, 0.06};
  Range table_leg_length{0.62, 0.75};
  Range table_leg_radius{0.02, 0.04};
  double stretcher_probability = 0.5;

  // lamp
  Range base_radius{0.12, 0.20};
  Range base_height{0.03, 0.06};
  Range pole_length{0.40, 0.70};
  Range pole_radius{0.015, 0.03};
  Range shade_radius{0.16, 0.26};
  Range shade_height{0.12, 0.22};

  /// Throws InvalidArgument for empty, inverted or non-positive ranges and bad probabilities.
  void validate() const;
};

/// Split from a hash bucket of the sample id: 70% train, 10% val, 20% test.
Split split_of(std::uint64_t id);

struct GeneratedSample {
  AssemblySample sample;
  /// Normalized shape before decomposition into canonical parts.
  PointSet reference;
};

GeneratedSample generate_one(const GeneratorSpec& spec, std::size_t index);
std::vector<AssemblySample> generate(const GeneratorSpec& spec, std::size_t count);

/// Indices kept when each of n parts is removed independently with probability p.
/// Redraws until at least one part survives.
std::vector<std::size_t> drop_survivors(std::size_t n, double p, std::uint64_t seed);

/// Sample restricted to the surviving parts; partition, adjacency and contacts are re-indexed.
AssemblySample subset(const AssemblySample& sample, std::span<const std::size_t> survivors);

AssemblySample part_drop(const AssemblySample& sample, double p, std::uint64_t seed);

}  // namespace instformer
