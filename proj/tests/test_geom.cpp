#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "instformer/error.hpp"
#include "instformer/geom.hpp"
#include "support.hpp"

using namespace instformer;
using namespace testing_support;

TEST(Quat, MatrixIsARotation) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Mat3 r = random_quat(rng).to_matrix();
    EXPECT_NEAR((r * r.transpose() - Mat3::Identity()).norm(), 0.0, 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(Quat, ProductComposesRotations) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Quat a = random_quat(rng), b = random_quat(rng);
    EXPECT_NEAR(((a * b).to_matrix() - a.to_matrix() * b.to_matrix()).norm(), 0.0, 1e-12);
  }
}

TEST(Quat, FromMatrixRoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Quat q = random_quat(rng).canonical();
    const Quat back = Quat::from_matrix(q.to_matrix()).canonical();
    EXPECT_NEAR(back.w, q.w, 1e-12);
    EXPECT_NEAR(back.x, q.x, 1e-12);
    EXPECT_NEAR(back.y, q.y, 1e-12);
    EXPECT_NEAR(back.z, q.z, 1e-12);
  }
}

TEST(Quat, CanonicalHasNonNegativeW) {
  const Quat q = Quat{-0.5, 0.5, -0.5, 0.5}.canonical();
  EXPECT_GE(q.w, 0.0);
  EXPECT_DOUBLE_EQ(q.x, -0.5);
}

TEST(Quat, ZeroQuaternionCannotBeNormalized) { EXPECT_THROW(Quat({0, 0, 0, 0}).normalized(), InvalidArgument); }

TEST(Pose, MakePoseValidates) {
  EXPECT_THROW(make_pose(Quat{2.0, 0, 0, 0}, Vec3::Zero()), InvalidArgument);
  EXPECT_THROW(make_pose(Quat{}, Vec3(std::nan(""), 0, 0)), InvalidArgument);
  const Pose p = make_pose(Quat{-1.0, 0, 0, 0}, Vec3(1, 2, 3));
  EXPECT_EQ(p.rotation.w, 1.0);
}

TEST(Pose, ArrayLayoutIsWxyzThenTranslation) {
  const Pose p = make_pose(Quat{0, 1, 0, 0}, Vec3(4, 5, 6));
  const auto a = p.to_array();
  EXPECT_EQ(a, (std::array<double, 7>{0, 1, 0, 0, 4, 5, 6}));
  EXPECT_EQ(Pose::from_array(a), p);
  const double short_array[3] = {1, 2, 3};
  EXPECT_THROW(Pose::from_array(short_array), InvalidArgument);
}

TEST(Pose, InverseUndoesApply) {
  Rng rng(4);
  const auto pts = random_points(rng, 20);
  for (int i = 0; i < 20; ++i) {
    const Pose p = random_pose(rng);
    const auto back = apply_pose(p.inverse(), apply_pose(p, pts));
    for (std::size_t k = 0; k < pts.size(); ++k) EXPECT_NEAR((back[k] - pts[k]).norm(), 0.0, 1e-12);
  }
}

TEST(Pose, ApplyMatchesMatrixForm) {
  Rng rng(5);
  const Pose p = random_pose(rng);
  const auto pts = random_points(rng, 10);
  const auto out = apply_pose(p, pts);
  const Mat3 r = p.rotation.to_matrix();
  for (std::size_t k = 0; k < pts.size(); ++k) EXPECT_NEAR((out[k] - (r * pts[k] + p.translation)).norm(), 0.0, 1e-14);
}

TEST(PartCloud, RejectsTooFewOrNonFinitePoints) {
  EXPECT_THROW(PartCloud(PointSet(3, Vec3::Zero())), InvalidArgument);
  PointSet bad(5, Vec3::Zero());
  bad[2].x() = std::numeric_limits<double>::infinity();
  EXPECT_THROW(PartCloud{bad}, InvalidArgument);
}

TEST(Shape, AssembleIsUnionOfPosedParts) {
  Rng rng(6);
  Shape s;
  s.parts = {PartCloud(random_points(rng, 5)), PartCloud(random_points(rng, 7))};
  s.poses = {random_pose(rng), random_pose(rng)};
  const auto all = s.assemble();
  ASSERT_EQ(all.size(), 12u);
  const auto second = apply_pose(s.poses[1], s.parts[1].points());
  EXPECT_NEAR((all[5] - second[0]).norm(), 0.0, 0.0);
  s.poses.pop_back();
  EXPECT_THROW(s.assemble(), InvalidArgument);
}

TEST(Aabb, BoundsEveryPoint) {
  const PointSet pts{Vec3(1, -2, 3), Vec3(-1, 4, 0), Vec3(0, 0, -5)};
  const Aabb box = aabb_of(pts);
  EXPECT_EQ(box.min, Vec3(-1, -2, -5));
  EXPECT_EQ(box.max, Vec3(1, 4, 3));
  EXPECT_EQ(box.extent(), Vec3(2, 6, 8));
  EXPECT_EQ(box.center(), Vec3(0, 1, -1));
  EXPECT_THROW(aabb_of(PointSet{}), InvalidArgument);
}

TEST(Chamfer, MatchesNaiveDoubleLoop) {
  Rng rng(7);
  std::uniform_int_distribution<std::size_t> size(1, 64);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_points(rng, size(rng));
    const auto b = random_points(rng, size(rng));
    EXPECT_NEAR(chamfer(a, b), naive_chamfer(a, b), 1e-12);
  }
}

TEST(Chamfer, SymmetricAndZeroOnSelf) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_points(rng, 17);
    const auto b = random_points(rng, 9);
    EXPECT_NEAR(chamfer(a, b), chamfer(b, a), 1e-12);
    EXPECT_EQ(chamfer(a, a), 0.0);
  }
}

TEST(Chamfer, ZeroForMutuallyCoveringSetsWithDuplicates) {
  const PointSet a{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const PointSet b{Vec3(1, 0, 0), Vec3(0, 0, 0), Vec3(0, 0, 0)};
  EXPECT_EQ(chamfer(a, b), 0.0);
}

TEST(NearestNeighbors, TiesResolveToLowestIndex) {
  const PointSet target{Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(1, 0, 0)};
  const PointSet query{Vec3(0, 0, 0), Vec3(2, 0, 0)};
  const auto nn = nearest_neighbors(query, target);
  EXPECT_EQ(nn[0].index, 0u);
  EXPECT_EQ(nn[0].dist2, 1.0);
  EXPECT_EQ(nn[1].index, 0u);
}

namespace {

std::vector<std::size_t> naive_fps(const PointSet& cloud, std::size_t k, std::size_t start) {
  std::vector<std::size_t> chosen{start};
  while (chosen.size() < k) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (auto c : chosen) d = std::min(d, (cloud[i] - cloud[c]).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

}  // namespace

TEST(Fps, MatchesGreedyOracle) {
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const auto cloud = random_points(rng, 50);
    EXPECT_EQ(fps_from(cloud, 12, i % 50), naive_fps(cloud, 12, i % 50));
  }
}

TEST(Fps, DistinctIndicesAndDeterministicSeed) {
  Rng rng(10);
  const auto cloud = random_points(rng, 64);
  const auto a = fps(cloud, 64, 3);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_TRUE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  EXPECT_EQ(a, fps(cloud, 64, 3));
  EXPECT_THROW(fps(cloud, 65, 0), InvalidArgument);
  EXPECT_THROW(fps(cloud, 0, 0), InvalidArgument);
  EXPECT_THROW(fps_from(cloud, 4, 64), InvalidArgument);
}

TEST(Pca, PoseMapsCanonicalCloudBackOntoInput) {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    auto pts = box_points(rng, Vec3(0.5, 0.2, 0.05), 200);
    pts = apply_pose(random_pose(rng), pts);
    const auto [canon, pose] = pca_canonicalize(pts);
    const auto back = apply_pose(pose, canon);
    for (std::size_t k = 0; k < pts.size(); ++k) EXPECT_NEAR((back[k] - pts[k]).norm(), 0.0, 1e-12);

    Vec3 mean = Vec3::Zero();
    for (const auto& p : canon) mean += p;
    EXPECT_NEAR((mean / canon.size()).norm(), 0.0, 1e-12);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : canon) cov += p * p.transpose();
    EXPECT_NEAR(cov(0, 1), 0.0, 1e-9);
    EXPECT_NEAR(cov(0, 2), 0.0, 1e-9);
    EXPECT_NEAR(cov(1, 2), 0.0, 1e-9);
    EXPECT_GE(cov(0, 0), cov(1, 1));
    EXPECT_GE(cov(1, 1), cov(2, 2));
  }
}

TEST(Pca, RigidMotionOfInputGivesSameCanonicalExtent) {
  Rng rng(12);
  const auto pts = box_points(rng, Vec3(0.4, 0.15, 0.05), 300);
  const auto a = pca_canonicalize(pts).first;
  const auto b = pca_canonicalize(apply_pose(random_pose(rng), pts)).first;
  EXPECT_NEAR((aabb_of(a).extent() - aabb_of(b).extent()).norm(), 0.0, 1e-9);
}

TEST(Pca, DegenerateCloudThrows) { EXPECT_THROW(pca_canonicalize(PointSet(5, Vec3(1, 1, 1))), InvalidArgument); }

TEST(Spacing, RegularGrid) {
  PointSet grid;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) grid.emplace_back(0.5 * i, 0.5 * j, 0.0);
  EXPECT_DOUBLE_EQ(mean_point_spacing(grid), 0.5);
}
