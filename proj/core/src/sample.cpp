#include "instformer/sample.hpp"

#include <cmath>
#include <string>

#include "instformer/error.hpp"

namespace instformer {

std::string_view to_string(Category c) {
  switch (c) {
    case Category::chair: return "chair";
    case Category::table: return "table";
    case Category::lamp: return "lamp";
  }
  return "chair";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Category category_from_string(std::string_view name) {
  if (name == "chair") return Category::chair;
  if (name == "table") return Category::table;
  if (name == "lamp") return Category::lamp;
  throw InvalidArgument("unknown category '" + std::string(name) + "' (expected chair|table|lamp)");
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw InvalidArgument("unknown split '" + std::string(name) + "' (expected train|val|test)");
}

void AssemblySample::validate(std::size_t max_parts) const {
  const std::string where = "sample " + std::to_string(id) + ": ";
  if (parts.empty()) throw InvalidArgument(where + "no parts");
  if (parts.size() > max_parts)
    throw InvalidArgument(where + std::to_string(parts.size()) + " parts exceed the limit of " + std::to_string(max_parts));
  if (gt_poses.size() != parts.size()) throw InvalidArgument(where + "pose count differs from part count");
  if (partition.n_parts() != parts.size()) throw InvalidArgument(where + "partition does not cover the parts");
  for (const auto& p : gt_poses)
    if (std::abs(p.rotation.norm() - 1.0) > 1e-6 || !p.translation.allFinite())
      throw InvalidArgument(where + "invalid ground-truth pose");
  for (const auto& [i, j] : adjacency)
    if (i >= j || j >= parts.size()) throw InvalidArgument(where + "bad adjacency pair");
  for (const auto& c : contacts)
    if (c.i >= c.j || c.j >= parts.size()) throw InvalidArgument(where + "bad contact pair");
}

PointSet assembled_gt(const AssemblySample& sample) {
  PointSet out;
  for (std::size_t i = 0; i < sample.parts.size(); ++i) {
    const auto posed = apply_pose(sample.gt_poses[i], sample.parts[i].points());
    out.insert(out.end(), posed.begin(), posed.end());
  }
  return out;
}

}  // namespace instformer
