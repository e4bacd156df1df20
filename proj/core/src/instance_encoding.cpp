#include "instformer/instance_encoding.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "instformer/error.hpp"

namespace instformer {

namespace {
constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();

std::size_t one_hot_index(const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == 1.0) return i;
  throw InvalidArgument("InstanceCode: vector is not one-hot");
}
}  // namespace

EquivalencePartition::EquivalencePartition(std::vector<std::vector<std::size_t>> classes, std::size_t n_parts)
    : classes_(std::move(classes)), class_of_(n_parts, kUnassigned) {
  if (classes_.empty() && n_parts > 0) throw InvalidArgument("EquivalencePartition: no classes");
  for (std::size_t k = 0; k < classes_.size(); ++k) {
    if (classes_[k].empty()) throw InvalidArgument("EquivalencePartition: empty class " + std::to_string(k));
    for (std::size_t p : classes_[k]) {
      if (p >= n_parts) throw InvalidArgument("EquivalencePartition: part index " + std::to_string(p) + " out of range");
      if (class_of_[p] != kUnassigned)
        throw InvalidArgument("EquivalencePartition: part " + std::to_string(p) + " in two classes");
      class_of_[p] = k;
    }
  }
  for (std::size_t p = 0; p < n_parts; ++p)
    if (class_of_[p] == kUnassigned)
      throw InvalidArgument("EquivalencePartition: part " + std::to_string(p) + " not covered");
  for (auto& c : classes_) std::sort(c.begin(), c.end());
  std::sort(classes_.begin(), classes_.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  for (std::size_t k = 0; k < classes_.size(); ++k)
    for (std::size_t p : classes_[k]) class_of_[p] = k;
}

EquivalencePartition EquivalencePartition::singletons(std::size_t n_parts) {
  std::vector<std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n_parts; ++i) classes.push_back({i});
  return EquivalencePartition(std::move(classes), n_parts);
}

std::size_t EquivalencePartition::class_of(std::size_t part) const {
  if (part >= class_of_.size()) throw InvalidArgument("EquivalencePartition: part " + std::to_string(part) + " not covered");
  return class_of_[part];
}

EquivalencePartition EquivalencePartition::restricted(std::span<const std::size_t> survivors) const {
  std::vector<std::size_t> new_index(n_parts(), kUnassigned);
  for (std::size_t i = 0; i < survivors.size(); ++i) new_index.at(survivors[i]) = i;
  std::vector<std::vector<std::size_t>> classes;
  for (const auto& cls : classes_) {
    std::vector<std::size_t> kept;
    for (std::size_t p : cls)
      if (new_index[p] != kUnassigned) kept.push_back(new_index[p]);
    if (!kept.empty()) {
      std::sort(kept.begin(), kept.end());
      classes.push_back(std::move(kept));
    }
  }
  std::sort(classes.begin(), classes.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return EquivalencePartition(std::move(classes), survivors.size());
}

std::size_t InstanceCode::inter_index() const { return one_hot_index(inter); }
std::size_t InstanceCode::intra_index() const { return one_hot_index(intra); }

double extent_gap(std::span<const Vec3> a, std::span<const Vec3> b) {
  return (aabb_of(a).extent() - aabb_of(b).extent()).cwiseAbs().maxCoeff();
}

EquivalencePartition cluster_equivalent(std::span<const PartCloud> clouds, double threshold) {
  if (clouds.empty()) throw InvalidArgument("cluster_equivalent: empty part list");
  if (!(threshold > 0.0)) throw InvalidArgument("cluster_equivalent: threshold must be positive");
  std::vector<Vec3> extents;
  extents.reserve(clouds.size());
  for (const auto& c : clouds) extents.push_back(aabb_of(c.points()).extent());

  std::vector<std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    bool placed = false;
    for (auto& cls : classes) {
      if ((extents[i] - extents[cls.front()]).cwiseAbs().maxCoeff() < threshold) {
        cls.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) classes.push_back({i});
  }
  return EquivalencePartition(std::move(classes), clouds.size());
}

std::vector<InstanceCode> instance_encode(const EquivalencePartition& partition, std::size_t n_parts,
                                          std::size_t max_parts) {
  if (n_parts > max_parts)
    throw InvalidArgument("instance_encode: " + std::to_string(n_parts) + " parts exceed max_parts " +
                          std::to_string(max_parts));
  if (partition.n_parts() != n_parts)
    throw InvalidArgument("instance_encode: partition covers " + std::to_string(partition.n_parts()) +
                          " parts, expected " + std::to_string(n_parts));
  std::vector<InstanceCode> codes;
  codes.reserve(n_parts);
  for (std::size_t i = 0; i < n_parts; ++i) {
    InstanceCode code{std::vector<double>(max_parts, 0.0), std::vector<double>(max_parts, 0.0)};
    code.inter[i] = 1.0;
    code.intra[partition.class_of(i)] = 1.0;
    codes.push_back(std::move(code));
  }
  return codes;
}

}  // namespace instformer
