#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "instformer/geom.hpp"
#include "instformer/instance_encoding.hpp"

namespace instformer {

enum class Category : std::uint8_t { chair, table, lamp };
enum class Split : std::uint8_t { train, val, test };

std::string_view to_string(Category c);
std::string_view to_string(Split s);
Category category_from_string(std::string_view name);
Split split_from_string(std::string_view name);

/// A connected part pair with the contact point of each part in that part's canonical frame. i < j.
struct ContactPair {
  std::size_t i = 0;
  std::size_t j = 0;
  Vec3 c_ij = Vec3::Zero();
  Vec3 c_ji = Vec3::Zero();

  friend bool operator==(const ContactPair&, const ContactPair&) = default;
};

/// One shape: canonical part clouds, their ground-truth poses, equivalence classes and contacts.
struct AssemblySample {
  std::uint64_t id = 0;
  Category category = Category::chair;
  Split split = Split::train;
  std::vector<PartCloud> parts;
  std::vector<Pose> gt_poses;
  EquivalencePartition partition;
  /// Connected pairs (i < j) from the generator's construction; empty for external data.
  std::vector<std::pair<std::size_t, std::size_t>> adjacency;
  std::vector<ContactPair> contacts;

  std::size_t n_parts() const { return parts.size(); }
  /// Throws InvalidArgument when the fields are inconsistent.
  void validate(std::size_t max_parts = kDefaultMaxParts) const;

  friend bool operator==(const AssemblySample&, const AssemblySample&) = default;
};

/// GT assembly: union of posed parts.
PointSet assembled_gt(const AssemblySample& sample);

}  // namespace instformer
