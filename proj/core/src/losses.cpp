#include "instformer/losses.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "instformer/error.hpp"
#include "instformer/hungarian.hpp"
#include "instformer/rng.hpp"

namespace instformer {

namespace {

void require_aligned(std::size_t pred, std::size_t gt, std::size_t parts, const char* op) {
  if (pred != parts || gt != parts)
    throw InvalidArgument(std::string(op) + ": " + std::to_string(pred) + " predictions, " + std::to_string(gt) +
                          " GT poses and " + std::to_string(parts) + " parts");
}

PointSet to_points(const ad::Tensor& t) {
  const auto& v = t.value();
  PointSet out(v.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  return out;
}

ad::Tensor points_tensor(std::span<const Vec3> points) {
  std::vector<double> v;
  v.reserve(points.size() * 3);
  for (const auto& p : points) v.insert(v.end(), {p.x(), p.y(), p.z()});
  return ad::Tensor::constant({points.size(), 3}, std::move(v));
}

}  // namespace

// ---- differentiable geometry ----------------------------------------------

ad::Tensor quat_to_matrix(const ad::Tensor& q) {
  if (q.rank() != 2 || q.dim(1) != 4) throw ShapeError("quat_to_matrix: expected [N,4], got " + ad::to_string(q.shape()));
  const std::size_t n = q.dim(0);
  const auto& v = q.value();
  std::vector<double> out(n * 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Quat quat{v[4 * i], v[4 * i + 1], v[4 * i + 2], v[4 * i + 3]};
    const Mat3 r = quat.to_matrix();
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) out[9 * i + 3 * a + b] = r(a, b);
  }
  return ad::make_result("quat_to_matrix", {n, 9}, std::move(out), {q}, [n](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    std::vector<double> g(4 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = p.value[4 * i], x = p.value[4 * i + 1], y = p.value[4 * i + 2], z = p.value[4 * i + 3];
      const double* G = &self.grad[9 * i];
      // Rows of d r_ab / d(w, x, y, z) for the entries of the rotation matrix.
      const double d[9][4] = {
          {0.0, 0.0, -4.0 * y, -4.0 * z},           {-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w},
          {2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x},     {2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w},
          {0.0, -4.0 * x, 0.0, -4.0 * z},           {-2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y},
          {-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x},   {2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y},
          {0.0, -4.0 * x, -4.0 * y, 0.0},
      };
      for (std::size_t e = 0; e < 9; ++e)
        for (std::size_t c = 0; c < 4; ++c) g[4 * i + c] += G[e] * d[e][c];
    }
    ad::accumulate(p, g);
  });
}

std::string_view to_string(ChamferReduction r) { return r == ChamferReduction::sum ? "sum" : "mean"; }

ChamferReduction chamfer_reduction_from_string(std::string_view name) {
  if (name == "sum") return ChamferReduction::sum;
  if (name == "mean") return ChamferReduction::mean;
  throw InvalidArgument("unknown Chamfer reduction '" + std::string(name) + "' (expected sum|mean)");
}

double chamfer_reduced(std::span<const Vec3> a, std::span<const Vec3> b, ChamferReduction reduction) {
  if (reduction == ChamferReduction::sum) return chamfer(a, b);
  if (a.empty() || b.empty()) throw InvalidArgument("chamfer_reduced: empty point set");
  double ab = 0.0, ba = 0.0;
  for (const auto& nb : nearest_neighbors(a, b)) ab += nb.dist2;
  for (const auto& nb : nearest_neighbors(b, a)) ba += nb.dist2;
  return ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size());
}

ad::Tensor chamfer_loss(const ad::Tensor& a, const ad::Tensor& b, ChamferReduction reduction) {
  for (const auto* t : {&a, &b})
    if (t->rank() != 2 || t->dim(1) != 3 || t->dim(0) == 0)
      throw ShapeError("chamfer_loss: expected non-empty [n,3] point sets, got " + ad::to_string(a.shape()) + " and " +
                       ad::to_string(b.shape()));
  const PointSet pa = to_points(a);
  const PointSet pb = to_points(b);
  auto ab = nearest_neighbors(pa, pb);
  auto ba = nearest_neighbors(pb, pa);
  if (auto* rec = ad::branch_recorder()) {
    for (const auto& nb : ab) rec->mix(nb.index);
    for (const auto& nb : ba) rec->mix(nb.index);
  }
  const bool mean = reduction == ChamferReduction::mean;
  const double wa = mean ? 1.0 / static_cast<double>(ab.size()) : 1.0;
  const double wb = mean ? 1.0 / static_cast<double>(ba.size()) : 1.0;
  double sum_ab = 0.0, sum_ba = 0.0;
  for (const auto& nb : ab) sum_ab += nb.dist2;
  for (const auto& nb : ba) sum_ba += nb.dist2;
  const double total = mean ? sum_ab * wa + sum_ba * wb : sum_ab + sum_ba;
  return ad::make_result(
      "chamfer_loss", {1}, {total}, {a, b},
      [ab = std::move(ab), ba = std::move(ba), wa, wb](ad::Node& self) {
        ad::Node& na = *self.parents[0];
        ad::Node& nb = *self.parents[1];
        const double g = 2.0 * self.grad[0];
        std::vector<double> ga(na.value.size(), 0.0), gb(nb.value.size(), 0.0);
        auto pair_grad = [&](double w, const std::vector<double>& x, std::size_t xi, const std::vector<double>& y,
                             std::size_t yi, std::vector<double>& gx, std::vector<double>& gy) {
          for (std::size_t c = 0; c < 3; ++c) {
            const double diff = g * w * (x[3 * xi + c] - y[3 * yi + c]);
            gx[3 * xi + c] += diff;
            gy[3 * yi + c] -= diff;
          }
        };
        for (std::size_t k = 0; k < ab.size(); ++k) pair_grad(wa, na.value, k, nb.value, ab[k].index, ga, gb);
        for (std::size_t k = 0; k < ba.size(); ++k) pair_grad(wb, nb.value, k, na.value, ba[k].index, gb, ga);
        ad::accumulate(na, ga);
        ad::accumulate(nb, gb);
      });
}

// ---- loss stack -------------------------------------------------------------

LossBreakdown assembly_loss(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                            const LossWeights& weights) {
  require_aligned(pred.size(), gt.size(), parts.size(), "assembly_loss");
  if (parts.empty()) throw InvalidArgument("assembly_loss: no parts");
  LossBreakdown out;
  PointSet pred_shape, gt_shape;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.translation += (pred[i].translation - gt[i].translation).squaredNorm();
    out.rotation += chamfer_reduced(rotate(pred[i].rotation, parts[i].points()), rotate(gt[i].rotation, parts[i].points()),
                                    weights.chamfer);
    const auto a = apply_pose(pred[i], parts[i].points());
    const auto b = apply_pose(gt[i], parts[i].points());
    pred_shape.insert(pred_shape.end(), a.begin(), a.end());
    gt_shape.insert(gt_shape.end(), b.begin(), b.end());
  }
  out.shape = chamfer_reduced(pred_shape, gt_shape, weights.chamfer);
  out.total = weights.translation * out.translation + weights.rotation * out.rotation + weights.shape * out.shape;
  return out;
}

LossBreakdown LossTerms::values() const {
  return {translation.item(), rotation.item(), shape.item(), total.item()};
}

LossTerms assembly_loss(const ad::Tensor& pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                        const LossWeights& weights) {
  const std::size_t n = parts.size();
  if (n == 0) throw InvalidArgument("assembly_loss: no parts");
  if (pred.rank() != 2 || pred.dim(1) != 7 || pred.dim(0) < n)
    throw ShapeError("assembly_loss: expected [>=" + std::to_string(n) + ",7] poses, got " + ad::to_string(pred.shape()));
  if (gt.size() != n)
    throw InvalidArgument("assembly_loss: " + std::to_string(gt.size()) + " GT poses for " + std::to_string(n) + " parts");

  const auto rows = pred.dim(0) == n ? pred : ad::slice(pred, 0, 0, n);
  const auto quats = ad::slice(rows, 1, 0, 4);
  const auto trans = ad::slice(rows, 1, 4, 7);
  const auto mats = quat_to_matrix(quats);

  std::vector<double> gt_t;
  for (const auto& p : gt) gt_t.insert(gt_t.end(), {p.translation.x(), p.translation.y(), p.translation.z()});
  const auto diff = ad::sub(trans, ad::Tensor::constant({n, 3}, std::move(gt_t)));

  LossTerms out;
  out.translation = ad::sum(ad::mul(diff, diff));
  std::vector<ad::Tensor> world;
  PointSet gt_shape;
  for (std::size_t i = 0; i < n; ++i) {
    const auto cloud = points_tensor(parts[i].points());
    const auto r = ad::reshape(ad::slice(mats, 0, i, i + 1), {3, 3});
    const auto rotated = ad::matmul_nt(cloud, r);
    const auto term = chamfer_loss(rotated, points_tensor(rotate(gt[i].rotation, parts[i].points())), weights.chamfer);
    out.rotation = i == 0 ? term : ad::add(out.rotation, term);
    world.push_back(ad::add(rotated, ad::reshape(ad::slice(trans, 0, i, i + 1), {3})));
    const auto posed = apply_pose(gt[i], parts[i].points());
    gt_shape.insert(gt_shape.end(), posed.begin(), posed.end());
  }
  out.shape = chamfer_loss(ad::concat(std::span<const ad::Tensor>(world), 0), points_tensor(gt_shape), weights.chamfer);
  out.total = ad::add(ad::add(ad::scale(out.translation, weights.translation), ad::scale(out.rotation, weights.rotation)),
                      ad::scale(out.shape, weights.shape));
  return out;
}

// ---- matching ---------------------------------------------------------------

Matching Matching::identity(std::size_t n) {
  Matching m;
  m.gt_of.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.gt_of[i] = i;
  return m;
}

std::vector<Pose> Matching::apply(std::span<const Pose> gt) const {
  std::vector<Pose> out;
  out.reserve(gt_of.size());
  for (auto j : gt_of) out.push_back(gt[j]);
  return out;
}

Matching match_equivalent(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                          const EquivalencePartition& partition) {
  require_aligned(pred.size(), gt.size(), parts.size(), "match_equivalent");
  if (partition.n_parts() != parts.size())
    throw InvalidArgument("match_equivalent: partition covers " + std::to_string(partition.n_parts()) + " parts, sample has " +
                          std::to_string(parts.size()));
  Matching m = Matching::identity(parts.size());
  for (const auto& cls : partition.classes()) {
    if (cls.size() < 2) continue;
    std::vector<PointSet> posed_pred, posed_gt;
    for (auto i : cls) {
      posed_pred.push_back(apply_pose(pred[i], parts[i].points()));
      posed_gt.push_back(apply_pose(gt[i], parts[i].points()));
    }
    std::vector<std::vector<double>> cost(cls.size(), std::vector<double>(cls.size()));
    for (std::size_t a = 0; a < cls.size(); ++a)
      for (std::size_t b = 0; b < cls.size(); ++b) cost[a][b] = chamfer(posed_pred[a], posed_gt[b]);
    const auto assignment = hungarian(cost);
    for (std::size_t a = 0; a < cls.size(); ++a) m.gt_of[cls[a]] = cls[assignment.column[a]];
  }
  if (auto* rec = ad::branch_recorder())
    for (auto g : m.gt_of) rec->mix(g);
  return m;
}

// ---- forward passes and Min-of-N -----------------------------------------

std::uint64_t branch_seed(std::uint64_t global_seed, std::uint64_t epoch, std::uint64_t sample_id, std::uint64_t branch) {
  return derive_seed({global_seed, epoch, sample_id, branch});
}

std::vector<double> branch_noise(const ModelConfig& config, std::size_t n_parts, std::uint64_t seed) {
  Rng rng(seed);
  auto v = normal_vector(rng, n_parts * config.noise_dim);
  for (auto& x : v) x *= config.noise_scale;
  return v;
}

PoseSequence predict_sample(const AssemblyModel& model, const AssemblySample& sample, const ad::Tensor& features,
                            std::uint64_t noise_seed) {
  const auto& config = model.config();
  const std::size_t n = sample.n_parts();
  const auto codes = instance_encode(sample.partition, n, config.max_parts);
  const auto noise = branch_noise(config, n, noise_seed);
  const auto inputs = make_token_inputs(config, codes, noise, n);
  return model.encode(features, inputs).poses;
}

SequenceLoss sequence_loss(const PoseSequence& poses, std::span<const Pose> gt, std::span<const PartCloud> parts,
                           const EquivalencePartition& partition, const LossWeights& weights) {
  if (poses.empty()) throw InvalidArgument("sequence_loss: empty pose sequence");
  SequenceLoss out;
  ad::Tensor sum;
  for (const auto& layer : poses) {
    const auto pred = poses_of(layer, parts.size());
    auto matching = match_equivalent(pred, gt, parts, partition);
    const auto matched = matching.apply(gt);
    const auto terms = assembly_loss(layer, matched, parts, weights);
    out.layers.push_back(terms.values());
    out.matchings.push_back(std::move(matching));
    sum = sum.defined() ? ad::add(sum, terms.total) : terms.total;
  }
  out.mean_total = ad::scale(sum, 1.0 / static_cast<double>(poses.size()));
  return out;
}

PoseSequence predict_inprocess(const AssemblyModel& model, const AssemblySample& sample, std::size_t query,
                               std::span<const std::size_t> memory, const ad::Tensor& features, std::uint64_t noise_seed) {
  const auto& config = model.config();
  const std::size_t n = sample.n_parts();
  if (query >= n) throw InvalidArgument("predict_inprocess: query index out of range");
  if (memory.empty()) throw InvalidArgument("decoder_forward: empty encoder memory");
  const auto codes = instance_encode(sample.partition, n, config.max_parts);
  const auto noise = branch_noise(config, n, noise_seed);
  auto select = [&](std::span<const std::size_t> idx) {
    std::vector<InstanceCode> c;
    std::vector<double> r;
    for (auto i : idx) {
      if (i >= n) throw InvalidArgument("predict_inprocess: memory index out of range");
      c.push_back(codes[i]);
      r.insert(r.end(), noise.begin() + i * config.noise_dim, noise.begin() + (i + 1) * config.noise_dim);
    }
    return make_token_inputs(config, c, r, idx.size());
  };
  std::vector<Pose> memory_gt;
  for (auto i : memory) memory_gt.push_back(sample.gt_poses.at(i));
  const auto fixed = poses_tensor(memory_gt, memory.size());
  const auto encoded = model.encode(ad::gather_rows(features, memory), select(memory), &fixed);
  const std::size_t q[1] = {query};
  return model.decode(ad::gather_rows(features, q), select(q), encoded.memory);
}

SequenceLoss inprocess_loss(const PoseSequence& poses, const AssemblySample& sample, std::size_t query,
                            std::span<const std::size_t> candidates, const LossWeights& weights) {
  if (poses.empty()) throw InvalidArgument("inprocess_loss: empty pose sequence");
  if (candidates.empty()) throw InvalidArgument("inprocess_loss: no candidate slots");
  const auto& part = sample.parts.at(query);
  std::span<const PartCloud> parts(&part, 1);
  SequenceLoss out;
  ad::Tensor sum;
  for (const auto& layer : poses) {
    const auto pred = poses_of(layer, 1);
    const auto posed = apply_pose(pred[0], part.points());
    std::size_t target = candidates[0];
    double best = std::numeric_limits<double>::infinity();
    for (auto c : candidates) {
      const double cost = chamfer(posed, apply_pose(sample.gt_poses.at(c), sample.parts.at(c).points()));
      if (cost < best) {
        best = cost;
        target = c;
      }
    }
    const Pose gt = sample.gt_poses[target];
    const auto terms = assembly_loss(layer, std::span<const Pose>(&gt, 1), parts, weights);
    out.layers.push_back(terms.values());
    out.matchings.push_back(Matching{{target}});
    sum = sum.defined() ? ad::add(sum, terms.total) : terms.total;
  }
  out.mean_total = ad::scale(sum, 1.0 / static_cast<double>(poses.size()));
  return out;
}

MonResult mon_loss(const AssemblyModel& model, const AssemblySample& sample, const MonOptions& options) {
  if (options.n == 0) throw InvalidArgument("mon_loss: n must be >= 1");
  MonResult result;
  {
    ad::NoGradScope no_grad;
    const auto features = model.pointnet_encode(sample.parts);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < options.n; ++j) {
      const auto seed = branch_seed(options.seed, options.epoch, sample.id, j);
      const auto poses = predict_sample(model, sample, features, seed);
      const auto loss = sequence_loss(poses, sample.gt_poses, sample.parts, sample.partition, options.weights);
      const double value = loss.mean_total.item();
      result.branch_losses.push_back(value);
      if (value < best) {
        best = value;
        result.best = j;
        result.final_layer = loss.layers.back();
      }
    }
    result.loss = best;
  }
  if (ad::active_tape()) {
    const auto features = model.pointnet_encode(sample.parts);
    const auto poses =
        predict_sample(model, sample, features, branch_seed(options.seed, options.epoch, sample.id, result.best));
    result.taped = sequence_loss(poses, sample.gt_poses, sample.parts, sample.partition, options.weights).mean_total;
  }
  return result;
}

}  // namespace instformer
