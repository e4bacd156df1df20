#include "instformer/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "instformer/error.hpp"
#include "instformer/rng.hpp"

namespace instformer {

namespace {

constexpr double kUnitTolerance = 1e-6;

void require_non_empty(std::span<const Vec3> cloud, const char* what) {
  if (cloud.empty()) throw InvalidArgument(std::string(what) + ": empty point set");
}

}  // namespace

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
  const double n = norm();
  if (!(n > 0.0)) throw InvalidArgument("Quat::normalized: zero quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quat Quat::canonical() const {
  if (w < 0.0) return {-w, -x, -y, -z};
  return *this;
}

Mat3 Quat::to_matrix() const {
  Mat3 r;
  r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  r(0, 1) = 2.0 * (x * y - w * z);
  r(0, 2) = 2.0 * (x * z + w * y);
  r(1, 0) = 2.0 * (x * y + w * z);
  r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  r(1, 2) = 2.0 * (y * z - w * x);
  r(2, 0) = 2.0 * (x * z - w * y);
  r(2, 1) = 2.0 * (y * z + w * x);
  r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Quat Quat::from_matrix(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  return Quat{q.w(), q.x(), q.y(), q.z()}.normalized().canonical();
}

Quat operator*(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

std::array<double, 7> Pose::to_array() const {
  return {rotation.w, rotation.x, rotation.y, rotation.z, translation.x(), translation.y(), translation.z()};
}

Pose Pose::from_array(std::span<const double> v) {
  if (v.size() != 7) throw InvalidArgument("Pose::from_array: expected 7 values, got " + std::to_string(v.size()));
  return Pose{Quat{v[0], v[1], v[2], v[3]}, Vec3(v[4], v[5], v[6])};
}

Pose Pose::inverse() const {
  const Quat inv = rotation.conjugate();
  return Pose{inv, -(inv.to_matrix() * translation)};
}

Pose make_pose(const Quat& rotation, const Vec3& translation) {
  if (std::abs(rotation.norm() - 1.0) > kUnitTolerance)
    throw InvalidArgument("make_pose: rotation is not a unit quaternion (norm " + std::to_string(rotation.norm()) + ")");
  if (!translation.allFinite()) throw InvalidArgument("make_pose: non-finite translation");
  return Pose{rotation.canonical(), translation};
}

PartCloud::PartCloud(PointSet points) : points_(std::move(points)) {
  if (points_.size() < 4)
    throw InvalidArgument("PartCloud: need at least 4 points, got " + std::to_string(points_.size()));
  for (const auto& p : points_)
    if (!p.allFinite()) throw InvalidArgument("PartCloud: non-finite coordinate");
}

PointSet Shape::assemble() const {
  if (parts.size() != poses.size()) throw InvalidArgument("Shape::assemble: parts/poses length mismatch");
  PointSet out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto posed = apply_pose(poses[i], parts[i].points());
    out.insert(out.end(), posed.begin(), posed.end());
  }
  return out;
}

Aabb aabb_of(std::span<const Vec3> cloud) {
  require_non_empty(cloud, "aabb_of");
  Aabb box{cloud[0], cloud[0]};
  for (const auto& p : cloud) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

std::vector<std::size_t> fps_from(std::span<const Vec3> cloud, std::size_t k, std::size_t start) {
  const std::size_t n = cloud.size();
  if (k < 1 || k > n)
    throw InvalidArgument("fps: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  if (start >= n) throw InvalidArgument("fps: start index out of range");

  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> picked;
  picked.reserve(k);
  std::size_t last = start;
  picked.push_back(last);
  dist[last] = -1.0;
  while (picked.size() < k) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (dist[i] < 0.0) continue;
      const double d = (cloud[i] - cloud[last]).squaredNorm();
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    last = best;
    dist[last] = -1.0;
    picked.push_back(last);
  }
  return picked;
}

std::vector<std::size_t> fps(std::span<const Vec3> cloud, std::size_t k, std::uint64_t seed) {
  require_non_empty(cloud, "fps");
  return fps_from(cloud, k, static_cast<std::size_t>(mix64(seed) % cloud.size()));
}

namespace {

// Orthonormal basis of the span of `basis` columns, seeded by the coordinate axes in order.
std::vector<Vec3> axis_ordered_basis(const std::vector<Vec3>& basis) {
  std::vector<Vec3> out;
  for (int a = 0; a < 3 && out.size() < basis.size(); ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = 1.0;
    Vec3 p = Vec3::Zero();
    for (const auto& b : basis) p += b.dot(e) * b;
    for (const auto& o : out) p -= p.dot(o) * o;
    if (p.norm() > 1e-6) out.push_back(p.normalized());
  }
  return out;
}

// Sign fixed by the third central moment along the axis; symmetric clouds fall back
// to making the largest-magnitude component positive.
Vec3 orient_axis(const Vec3& axis, const PointSet& centered, double scale) {
  double m3 = 0.0;
  for (const auto& c : centered) {
    const double s = c.dot(axis);
    m3 += s * s * s;
  }
  m3 /= static_cast<double>(centered.size());
  if (std::abs(m3) > 1e-12 * scale * scale * scale) return m3 < 0.0 ? Vec3(-axis) : axis;
  Eigen::Index arg = 0;
  axis.cwiseAbs().maxCoeff(&arg);
  return axis[arg] < 0.0 ? Vec3(-axis) : axis;
}

}  // namespace

std::pair<PointSet, Pose> pca_canonicalize(std::span<const Vec3> cloud) {
  require_non_empty(cloud, "pca_canonicalize");
  const double n = static_cast<double>(cloud.size());
  Vec3 mean = Vec3::Zero();
  for (const auto& p : cloud) mean += p;
  mean /= n;

  PointSet centered;
  centered.reserve(cloud.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : cloud) {
    centered.push_back(p - mean);
    cov += centered.back() * centered.back().transpose();
  }
  cov /= n;
  const double top = cov.diagonal().maxCoeff();
  if (!(top > 1e-24)) throw InvalidArgument("pca_canonicalize: all points identical, no principal frame");

  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  // Eigen sorts ascending; walk from the largest eigenvalue down and regroup ties.
  const Vec3 values = solver.eigenvalues();
  const Mat3 vectors = solver.eigenvectors();
  const double tie = 1e-10 * std::max(values[2], 1e-300);
  std::vector<Vec3> axes;
  int i = 2;
  while (i >= 0 && axes.size() < 2) {
    std::vector<Vec3> group{vectors.col(i)};
    int j = i - 1;
    while (j >= 0 && std::abs(values[i] - values[j]) <= tie) group.push_back(vectors.col(j--));
    if (group.size() > 1) group = axis_ordered_basis(group);
    for (const auto& g : group) axes.push_back(g);
    i = j;
  }
  const double scale = std::sqrt(top);
  const Vec3 e0 = orient_axis(axes[0], centered, scale);
  Vec3 e1 = axes[1] - axes[1].dot(e0) * e0;
  e1 = orient_axis(e1.normalized(), centered, scale);
  const Vec3 e2 = e0.cross(e1).normalized();

  Mat3 frame;
  frame.col(0) = e0;
  frame.col(1) = e1;
  frame.col(2) = e2;
  const Quat q = Quat::from_matrix(frame);
  const Mat3 r = q.to_matrix();  // re-derive so canonical -> input round-trips through the stored quaternion

  PointSet canonical;
  canonical.reserve(cloud.size());
  for (const auto& c : centered) canonical.push_back(r.transpose() * c);
  return {std::move(canonical), Pose{q, mean}};
}

PointSet rotate(const Quat& q, std::span<const Vec3> cloud) {
  const Mat3 r = q.to_matrix();
  PointSet out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(r * p);
  return out;
}

PointSet apply_pose(const Pose& pose, std::span<const Vec3> cloud) {
  if (std::abs(pose.rotation.norm() - 1.0) > kUnitTolerance)
    throw InvalidArgument("apply_pose: rotation is not a unit quaternion (norm " +
                          std::to_string(pose.rotation.norm()) + ")");
  const Mat3 r = pose.rotation.to_matrix();
  PointSet out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(r * p + pose.translation);
  return out;
}

std::vector<Neighbor> nearest_neighbors(std::span<const Vec3> queries, std::span<const Vec3> target) {
  require_non_empty(queries, "nearest_neighbors");
  require_non_empty(target, "nearest_neighbors");
  const std::size_t n = target.size();

  // Sweep over targets sorted by x: the x gap alone bounds the distance.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return target[a].x() < target[b].x(); });
  std::vector<double> xs(n), ys(n), zs(n);
  for (std::size_t k = 0; k < n; ++k) {
    xs[k] = target[order[k]].x();
    ys[k] = target[order[k]].y();
    zs[k] = target[order[k]].z();
  }

  std::vector<Neighbor> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double qx = queries[q].x(), qy = queries[q].y(), qz = queries[q].z();
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = n;
    auto consider = [&](std::size_t k) {
      const double dx = xs[k] - qx, dy = ys[k] - qy, dz = zs[k] - qz;
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best || (d == best && order[k] < best_idx)) {
        best = d;
        best_idx = order[k];
      }
    };
    const std::size_t pos = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), qx) - xs.begin());
    for (std::size_t k = pos; k < n; ++k) {
      const double dx = xs[k] - qx;
      if (dx * dx > best) break;
      consider(k);
    }
    for (std::size_t k = pos; k-- > 0;) {
      const double dx = xs[k] - qx;
      if (dx * dx > best) break;
      consider(k);
    }
    out[q] = Neighbor{best_idx, best};
  }
  return out;
}

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  require_non_empty(a, "chamfer");
  require_non_empty(b, "chamfer");
  double total = 0.0;
  for (const auto& nb : nearest_neighbors(a, b)) total += nb.dist2;
  for (const auto& nb : nearest_neighbors(b, a)) total += nb.dist2;
  return total;
}

double mean_point_spacing(std::span<const Vec3> cloud) {
  if (cloud.size() < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cloud.size(); ++j)
      if (j != i) best = std::min(best, (cloud[i] - cloud[j]).squaredNorm());
    total += std::sqrt(best);
  }
  return total / static_cast<double>(cloud.size());
}

}  // namespace instformer
