#include "instformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "instformer/error.hpp"
#include "instformer/rng.hpp"

namespace instformer::ad {

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

double evaluate(const std::function<Tensor()>& f, std::uint64_t* digest = nullptr) {
  BranchRecorder rec;
  const Tensor out = f();
  if (digest) *digest = rec.digest();
  if (out.size() != 1) throw ShapeError("grad_check: function must return a scalar, got " + to_string(out.shape()));
  return out.item();
}

}  // namespace

GradCheckResult grad_check_detailed(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                    const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (auto& leaf : leaves) {
    saved_flags.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = f();
    tape.backward(loss);
  }
  std::uint64_t base_digest = 0;
  if (options.skip_branch_changes) evaluate(f, &base_digest);
  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    const std::vector<double> analytic = leaf.grad();
    std::vector<std::size_t> probe(leaf.size());
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (options.entries_per_tensor > 0 && probe.size() > options.entries_per_tensor) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(options.entries_per_tensor);
    }
    auto& values = leaf.mutable_value();
    for (std::size_t i : probe) {
      const double original = values[i];
      std::uint64_t plus_digest = 0, minus_digest = 0;
      values[i] = original + options.eps;
      const double plus = evaluate(f, &plus_digest);
      values[i] = original - options.eps;
      const double minus = evaluate(f, &minus_digest);
      values[i] = original;
      ++result.probes;
      if (options.skip_branch_changes && (plus_digest != base_digest || minus_digest != base_digest)) {
        ++result.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * options.eps);
      result.max_error = std::max(result.max_error, relative_error(analytic[i], numeric));
    }
    leaf.zero_grad();
    leaf.set_requires_grad(saved_flags[li]);
  }
  return result;
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, const GradCheckOptions& options) {
  GradCheckOptions strict = options;
  strict.skip_branch_changes = false;
  return grad_check_detailed(f, leaves, strict).max_error;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = Tensor::parameter(x.shape(), x.value());
  Tensor leaves[] = {leaf};
  GradCheckOptions options;
  options.eps = eps;
  return grad_check([&] { return f(leaf); }, leaves, options);
}

}  // namespace instformer::ad
