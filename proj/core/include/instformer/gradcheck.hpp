#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "instformer/autodiff.hpp"

namespace instformer::ad {

/// Worst elementwise |analytic - numeric| / max(1, |analytic|, |numeric|), where the numeric
/// gradient comes from central differences with step `eps`.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-4);

struct GradCheckOptions {
  double eps = 1e-4;
  /// Entries probed per tensor; 0 probes every entry. Probed entries are drawn from `seed`.
  std::size_t entries_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Leave out probes whose perturbed evaluations take a different piecewise branch than the
  /// unperturbed one (see BranchRecorder); such a step straddles a point where no derivative exists.
  bool skip_branch_changes = false;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;
};

GradCheckResult grad_check_detailed(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                    const GradCheckOptions& options = {});

/// Same measure for a scalar function of several leaf tensors (e.g. model parameters),
/// which are perturbed in place and restored.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, const GradCheckOptions& options = {});

}  // namespace instformer::ad
