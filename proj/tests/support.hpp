#pragma once

// Shared fixtures and brute-force oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "instformer/geom.hpp"
#include "instformer/model.hpp"
#include "instformer/rng.hpp"
#include "instformer/sample.hpp"

namespace testing_support {

using namespace instformer;

inline PointSet random_points(Rng& rng, std::size_t n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  PointSet p(n);
  for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
  return p;
}

inline Quat random_quat(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

inline Pose random_pose(Rng& rng, double t = 0.5) {
  std::uniform_real_distribution<double> u(-t, t);
  return make_pose(random_quat(rng), Vec3(u(rng), u(rng), u(rng)));
}

/// Double loop over both directions, squared distances, summed.
inline double naive_chamfer(const PointSet& a, const PointSet& b) {
  double total = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, (p - q).squaredNorm());
    total += best;
  }
  for (const auto& q : b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : a) best = std::min(best, (p - q).squaredNorm());
    total += best;
  }
  return total;
}

/// Minimum over all permutations.
inline double brute_force_assignment(const std::vector<std::vector<double>>& cost) {
  std::vector<std::size_t> perm(cost.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < perm.size(); ++r) c += cost[r][perm[r]];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Box surface grid with `per_axis` samples along each edge direction, jittered by rng.
inline PointSet box_points(Rng& rng, const Vec3& half, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> face(0, 5);
  PointSet out(n);
  for (auto& p : out) {
    Vec3 v(u(rng) * half.x(), u(rng) * half.y(), u(rng) * half.z());
    const int f = face(rng);
    v[f / 2] = (f % 2 ? 1.0 : -1.0) * half[f / 2];
    p = v;
  }
  return out;
}

/// Small two-to-four part sample with random clouds and poses; parts 0 and 1 share geometry when
/// `twin` is set.
inline AssemblySample toy_sample(std::uint64_t seed, std::size_t n_parts, std::size_t n_pc, bool twin = false) {
  Rng rng(seed);
  AssemblySample s;
  s.id = seed;
  for (std::size_t i = 0; i < n_parts; ++i) {
    if (twin && i == 1) {
      s.parts.push_back(s.parts[0]);
    } else {
      s.parts.emplace_back(random_points(rng, n_pc, 0.2));
    }
    s.gt_poses.push_back(random_pose(rng, 0.4));
  }
  if (twin) {
    std::vector<std::vector<std::size_t>> classes{{0, 1}};
    for (std::size_t i = 2; i < n_parts; ++i) classes.push_back({i});
    s.partition = EquivalencePartition(classes, n_parts);
  } else {
    s.partition = EquivalencePartition::singletons(n_parts);
  }
  return s;
}

inline ModelConfig small_config(std::size_t noise_dim = 8) {
  ModelConfig c = model_preset("tiny");
  c.noise_dim = noise_dim;
  return c;
}

}  // namespace testing_support
