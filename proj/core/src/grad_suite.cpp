#include "instformer/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>

#include "instformer/gradcheck.hpp"
#include "instformer/losses.hpp"
#include "instformer/rng.hpp"

namespace instformer {

namespace {

using ad::Tensor;

Tensor random_tensor(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::constant(std::move(shape), std::move(v));
}

/// Values with |x| >= 0.1 so kinks (relu) stay further than eps away.
Tensor away_from_zero(Rng& rng, ad::Shape shape) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = (rng() & 1 ? 1.0 : -1.0) * u(rng);
  return Tensor::constant(std::move(shape), std::move(v));
}

/// Well separated values so the maximum of each row cannot change under a small perturbation.
Tensor distinct_values(Rng& rng, ad::Shape shape) {
  std::vector<double> v(ad::numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor::constant(std::move(shape), std::move(v));
}

/// Contracts an op output with fixed random weights so every output entry matters.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return ad::sum(ad::mul(out, weights)); }

ad::GradCheckResult check(const std::function<Tensor(std::span<const Tensor>)>& op, std::vector<Tensor> inputs, Rng& rng,
                          double eps) {
  std::vector<Tensor> leaves;
  for (auto& in : inputs) leaves.push_back(Tensor::parameter(in.shape(), in.value()));
  ad::Tensor weights;
  {
    ad::NoGradScope no_grad;
    const auto out = op(leaves);
    weights = random_tensor(rng, out.shape(), 0.5, 1.5);
  }
  return ad::grad_check_detailed([&] { return weighted_sum(op(leaves), weights); }, leaves, {eps, 0, 0, false});
}

}  // namespace

double GradSuiteReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_error);
  return w;
}

GradSuiteReport op_grad_suite(std::size_t seeds, double eps) {
  std::map<std::string, GradSuiteEntry> worst;
  auto record = [&](const std::string& name, const ad::GradCheckResult& r) {
    auto& e = worst[name];
    e.name = name;
    e.max_error = std::max(e.max_error, r.max_error);
    e.probes += r.probes;
  };
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(derive_seed({0x9c, s}));
    auto op = [](const char* name, ad::OpAttrs attrs = {}) {
      return [name, attrs](std::span<const Tensor> in) { return ad::op_apply(name, in, attrs); };
    };
    record("matmul", check(op("matmul"), {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})}, rng, eps));
    record("matmul_nt", check(op("matmul_nt"), {random_tensor(rng, {3, 4}), random_tensor(rng, {5, 4})}, rng, eps));
    record("transpose", check(op("transpose"), {random_tensor(rng, {3, 5})}, rng, eps));
    record("add", check(op("add"), {random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3})}, rng, eps));
    record("add", check(op("add"), {random_tensor(rng, {2, 4, 3}), random_tensor(rng, {3})}, rng, eps));
    record("sub", check(op("sub"), {random_tensor(rng, {4, 3}), random_tensor(rng, {3})}, rng, eps));
    record("mul", check(op("mul"), {random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3})}, rng, eps));
    record("mul", check(op("mul"), {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {3, 4})}, rng, eps));
    ad::OpAttrs sc;
    sc.scalar = -1.7;
    record("scale", check(op("scale", sc), {random_tensor(rng, {3, 3})}, rng, eps));
    ad::OpAttrs cat;
    cat.axis = 1;
    record("concat",
           check(op("concat", cat), {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 4}), random_tensor(rng, {3, 1})},
                 rng, eps));
    cat.axis = 0;
    record("concat", check(op("concat", cat), {random_tensor(rng, {2, 3}), random_tensor(rng, {4, 3})}, rng, eps));
    record("relu", check(op("relu"), {away_from_zero(rng, {4, 5})}, rng, eps));
    record("tanh", check(op("tanh"), {random_tensor(rng, {4, 5}, -2.0, 2.0)}, rng, eps));
    ad::OpAttrs sm;
    sm.axis = 1;
    record("softmax", check(op("softmax", sm), {random_tensor(rng, {3, 6}, -2.0, 2.0)}, rng, eps));
    sm.mask.assign(18, 0.0);
    sm.mask[2] = sm.mask[7] = sm.mask[17] = -std::numeric_limits<double>::infinity();
    record("softmax", check(op("softmax", sm), {random_tensor(rng, {3, 6}, -2.0, 2.0)}, rng, eps));
    sm.axis = 0;
    sm.mask.clear();
    record("softmax", check(op("softmax", sm), {random_tensor(rng, {5, 2}, -2.0, 2.0)}, rng, eps));
    record("layer_norm", check(op("layer_norm"),
                               {random_tensor(rng, {4, 6}, -2.0, 2.0), random_tensor(rng, {6}, 0.5, 1.5),
                                random_tensor(rng, {6})},
                               rng, eps));
    ad::OpAttrs ax1;
    ax1.axis = 1;
    ad::OpAttrs ax0;
    ax0.axis = 0;
    record("reduce_max", check(op("reduce_max", ax1), {distinct_values(rng, {4, 5})}, rng, eps));
    record("reduce_max", check(op("reduce_max", ax1), {distinct_values(rng, {2, 6, 3})}, rng, eps));
    record("reduce_mean", check(op("reduce_mean", ax0), {random_tensor(rng, {4, 5})}, rng, eps));
    record("reduce_mean", check(op("reduce_mean", ax1), {random_tensor(rng, {2, 3, 4})}, rng, eps));
    record("sum", check(op("sum"), {random_tensor(rng, {3, 4})}, rng, eps));
    record("l2_normalize", check(op("l2_normalize", ax1), {away_from_zero(rng, {4, 4})}, rng, eps));
    ad::OpAttrs sl;
    sl.axis = 1;
    sl.begin = 1;
    sl.end = 4;
    record("slice", check(op("slice", sl), {random_tensor(rng, {3, 6})}, rng, eps));
    ad::OpAttrs gr;
    gr.indices = {2, 0, 2, 3};
    record("gather_rows", check(op("gather_rows", gr), {random_tensor(rng, {4, 3})}, rng, eps));
    ad::OpAttrs rs;
    rs.shape = {2, 6};
    record("reshape", check(op("reshape", rs), {random_tensor(rng, {3, 4})}, rng, eps));
    record("quat_to_matrix",
           check([](std::span<const Tensor> in) { return quat_to_matrix(ad::l2_normalize(in[0], 1)); },
                 {away_from_zero(rng, {3, 4})}, rng, eps));
    record("chamfer_loss", check([](std::span<const Tensor> in) { return chamfer_loss(in[0], in[1]); },
                                 {random_tensor(rng, {7, 3}), random_tensor(rng, {5, 3})}, rng, eps));
    record("chamfer_loss(mean)",
           check([](std::span<const Tensor> in) { return chamfer_loss(in[0], in[1], ChamferReduction::mean); },
                 {random_tensor(rng, {6, 3}), random_tensor(rng, {8, 3})}, rng, eps));
  }
  GradSuiteReport report;
  for (const auto& [name, e] : worst) report.entries.push_back(e);
  return report;
}

ad::GradCheckResult model_grad_check(const ModelConfig& config, std::uint64_t seed, std::size_t entries_per_tensor, double eps) {
  AssemblyModel model(config, seed);
  model.randomize(derive_seed({seed, 0x7a}), 0.3);
  Rng rng(derive_seed({seed, 0x5a}));
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  AssemblySample sample;
  sample.id = seed;
  for (std::size_t p = 0; p < 2; ++p) {
    PointSet pts(config.n_pc);
    for (auto& x : pts) x = Vec3(2.0 * u(rng), u(rng), 0.5 * u(rng));
    sample.parts.emplace_back(std::move(pts));
    const Quat q = Quat{1.0 + u(rng), u(rng), u(rng), u(rng)}.normalized();
    sample.gt_poses.push_back(make_pose(q, Vec3(u(rng), u(rng), u(rng))));
  }
  sample.partition = EquivalencePartition::singletons(2);
  const auto noise_seed = derive_seed({seed, 0x40});
  auto loss = [&] {
    const auto features = model.pointnet_encode(sample.parts);
    const auto poses = predict_sample(model, sample, features, noise_seed);
    return sequence_loss(poses, sample.gt_poses, sample.parts, sample.partition).mean_total;
  };
  std::vector<Tensor> leaves;
  for (auto& [name, t] : model.parameters().entries()) leaves.push_back(t);
  return ad::grad_check_detailed(loss, leaves, {eps, entries_per_tensor, derive_seed({seed, 0x33}), true});
}

GradSuiteReport full_grad_suite(const ModelConfig& config, std::uint64_t seed, std::size_t entries_per_tensor) {
  auto report = op_grad_suite();
  const auto r = model_grad_check(config, seed, entries_per_tensor);
  report.entries.push_back({"assembly_loss(model)", r.max_error, r.probes, r.skipped});
  return report;
}

}  // namespace instformer
