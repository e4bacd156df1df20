#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "instformer/geom.hpp"

namespace instformer {

/// Disjoint, complete grouping of part indices into geometric-equivalence classes.
/// Classes are ordered by their first member.
class EquivalencePartition {
 public:
  EquivalencePartition() = default;
  /// Validates that `classes` is a disjoint cover of 0..n_parts-1 with no empty class.
  EquivalencePartition(std::vector<std::vector<std::size_t>> classes, std::size_t n_parts);

  static EquivalencePartition singletons(std::size_t n_parts);

  const std::vector<std::vector<std::size_t>>& classes() const { return classes_; }
  std::size_t n_parts() const { return class_of_.size(); }
  std::size_t n_classes() const { return classes_.size(); }
  std::size_t class_of(std::size_t part) const;

  /// Partition restricted to the surviving parts, re-indexed in survivor order.
  EquivalencePartition restricted(std::span<const std::size_t> survivors) const;

  friend bool operator==(const EquivalencePartition& a, const EquivalencePartition& b) {
    return a.classes_ == b.classes_;
  }

 private:
  std::vector<std::vector<std::size_t>> classes_;
  std::vector<std::size_t> class_of_;
};

/// (v_inter, v_intra) one-hot pair, each of length max_parts.
struct InstanceCode {
  std::vector<double> inter;
  std::vector<double> intra;

  std::size_t inter_index() const;
  std::size_t intra_index() const;
};

inline constexpr double kDefaultEquivalenceThreshold = 0.1;
inline constexpr std::size_t kDefaultMaxParts = 20;

/// L-infinity distance between the AABB extent vectors of two canonical clouds.
double extent_gap(std::span<const Vec3> a, std::span<const Vec3> b);

/// Greedy first-fit clustering: a part joins the first class whose representative
/// (first member) has extent gap strictly below `threshold`. Not transitive near the threshold.
EquivalencePartition cluster_equivalent(std::span<const PartCloud> clouds,
                                        double threshold = kDefaultEquivalenceThreshold);

/// Instance codes: part i gets inter = e_i and intra = e_k where part i belongs to class k.
std::vector<InstanceCode> instance_encode(const EquivalencePartition& partition, std::size_t n_parts,
                                          std::size_t max_parts = kDefaultMaxParts);

}  // namespace instformer
