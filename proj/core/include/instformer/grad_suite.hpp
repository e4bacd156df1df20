#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "instformer/gradcheck.hpp"
#include "instformer/model.hpp"

namespace instformer {

struct GradSuiteEntry {
  std::string name;
  double max_error = 0.0;
  std::size_t probes = 0;
  /// Probes left out because the step crossed a ReLU, max or nearest-neighbour switch.
  std::size_t skipped = 0;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;

  double worst() const;
};

/// Central-difference checks of every differentiable op (autodiff set plus quat_to_matrix and
/// chamfer_loss) on random inputs with at most 8 entries per axis, one run per seed.
GradSuiteReport op_grad_suite(std::size_t seeds = 5, double eps = 1e-4);

/// Checks the layer-averaged assembly loss of a randomized model on a random two-part sample
/// against every parameter (or `entries_per_tensor` random entries of each, when non-zero).
/// Probes whose step changes a piecewise branch are counted and left out.
ad::GradCheckResult model_grad_check(const ModelConfig& config, std::uint64_t seed, std::size_t entries_per_tensor = 0,
                        double eps = 1e-4);

/// op_grad_suite followed by model_grad_check, one entry each.
GradSuiteReport full_grad_suite(const ModelConfig& config, std::uint64_t seed = 0, std::size_t entries_per_tensor = 0);

}  // namespace instformer
