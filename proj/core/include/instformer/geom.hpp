#pragma once

// Point-cloud and rigid-transform primitives shared by every other module.

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace instformer {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointSet = std::vector<Vec3>;

/// Quaternion stored as (w, x, y, z).
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quat identity() { return {}; }
  double norm() const;
  Quat normalized() const;
  Quat conjugate() const { return {w, -x, -y, -z}; }
  /// Flips the sign so that w >= 0 (q and -q describe the same rotation).
  Quat canonical() const;
  Mat3 to_matrix() const;
  static Quat from_matrix(const Mat3& r);

  friend Quat operator*(const Quat& a, const Quat& b);
  friend bool operator==(const Quat&, const Quat&) = default;
};

/// Rigid transform x -> R(x) + t.
struct Pose {
  Quat rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  /// Layout used by the network: (w, x, y, z, tx, ty, tz).
  std::array<double, 7> to_array() const;
  static Pose from_array(std::span<const double> v);
  Pose inverse() const;

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

/// Validates a pose (unit quaternion within 1e-6, finite translation) and canonicalizes its sign.
Pose make_pose(const Quat& rotation, const Vec3& translation);

/// One part's points in its canonical frame. Holds at least 4 finite points.
class PartCloud {
 public:
  PartCloud() = default;
  explicit PartCloud(PointSet points);

  std::span<const Vec3> points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }

  friend bool operator==(const PartCloud&, const PartCloud&) = default;

 private:
  PointSet points_;
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
};

/// A set of parts with one pose each; assembles to the union of posed parts.
struct Shape {
  std::vector<PartCloud> parts;
  std::vector<Pose> poses;

  PointSet assemble() const;
};

Aabb aabb_of(std::span<const Vec3> cloud);

/// Furthest point sampling starting from an explicit index. Ties go to the lowest index.
std::vector<std::size_t> fps_from(std::span<const Vec3> cloud, std::size_t k, std::size_t start);

/// Furthest point sampling; the start index is derived from the seed.
std::vector<std::size_t> fps(std::span<const Vec3> cloud, std::size_t k, std::uint64_t seed);

/// Centers the cloud and rotates it into its principal frame (eigenvalues descending).
/// The returned pose maps the canonical cloud back onto the input.
std::pair<PointSet, Pose> pca_canonicalize(std::span<const Vec3> cloud);

PointSet apply_pose(const Pose& pose, std::span<const Vec3> cloud);
PointSet rotate(const Quat& q, std::span<const Vec3> cloud);

/// Symmetric Chamfer distance: sum over both directions of squared nearest-neighbour distances.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);

/// Nearest neighbour of every query point in `target`: (index, squared distance).
/// Equidistant candidates resolve to the lowest target index.
struct Neighbor {
  std::size_t index;
  double dist2;
};
std::vector<Neighbor> nearest_neighbors(std::span<const Vec3> queries, std::span<const Vec3> target);

/// Mean distance from each point to its nearest other point in the same set.
double mean_point_spacing(std::span<const Vec3> cloud);

}  // namespace instformer
