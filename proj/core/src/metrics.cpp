#include "instformer/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "json.hpp"

#include "instformer/error.hpp"
#include "instformer/rng.hpp"
#include "instformer/synthetic.hpp"

namespace instformer {

namespace {

ContactPair closest_pair(std::size_t i, std::size_t j, const PartCloud& pi, const PartCloud& pj, const PointSet& wi,
                         const PointSet& wj, double* dist2) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t ba = 0, bb = 0;
  for (std::size_t a = 0; a < wi.size(); ++a)
    for (std::size_t b = 0; b < wj.size(); ++b) {
      const double d = (wi[a] - wj[b]).squaredNorm();
      if (d < best) {
        best = d;
        ba = a;
        bb = b;
      }
    }
  if (dist2) *dist2 = best;
  return {i, j, pi[ba], pj[bb]};
}

}  // namespace

std::vector<ContactPair> contact_pairs(std::span<const PartCloud> parts, std::span<const Pose> gt,
                                       std::span<const std::pair<std::size_t, std::size_t>> adjacency,
                                       double tau_contact) {
  if (parts.size() != gt.size()) throw InvalidArgument("contact_pairs: part and pose counts differ");
  std::vector<PointSet> world;
  for (std::size_t i = 0; i < parts.size(); ++i) world.push_back(apply_pose(gt[i], parts[i].points()));
  std::vector<ContactPair> out;
  if (!adjacency.empty()) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs(adjacency.begin(), adjacency.end());
    for (auto& [i, j] : pairs) {
      if (i == j || std::max(i, j) >= parts.size()) throw InvalidArgument("contact_pairs: bad adjacency pair");
      if (i > j) std::swap(i, j);
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    for (const auto& [i, j] : pairs) out.push_back(closest_pair(i, j, parts[i], parts[j], world[i], world[j], nullptr));
    return out;
  }
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      double d2 = 0.0;
      const auto pair = closest_pair(i, j, parts[i], parts[j], world[i], world[j], &d2);
      if (d2 < tau_contact * tau_contact) out.push_back(pair);
    }
  return out;
}

std::vector<ContactPair> contact_pairs(const AssemblySample& sample, double tau_contact) {
  return contact_pairs(sample.parts, sample.gt_poses, sample.adjacency, tau_contact);
}

double part_chamfer(const Pose& pred, const Pose& gt, const PartCloud& part) {
  return chamfer(apply_pose(pred, part.points()), apply_pose(gt, part.points())) / static_cast<double>(part.size());
}

double part_accuracy(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                     double tau_p) {
  if (pred.size() != parts.size() || gt.size() != parts.size())
    throw InvalidArgument("part_accuracy: pose and part counts differ");
  if (parts.empty()) throw InvalidArgument("part_accuracy: no parts");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < parts.size(); ++i)
    if (part_chamfer(pred[i], gt[i], parts[i]) < tau_p) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(parts.size());
}

std::optional<double> connectivity_accuracy(std::span<const Pose> poses, std::span<const ContactPair> contacts,
                                            double tau_c) {
  if (contacts.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (const auto& c : contacts) {
    if (std::max(c.i, c.j) >= poses.size()) throw InvalidArgument("connectivity_accuracy: contact index out of range");
    const Pose& a = poses[c.i];
    const Pose& b = poses[c.j];
    const Vec3 pa = a.rotation.to_matrix() * c.c_ij + a.translation;
    const Vec3 pb = b.rotation.to_matrix() * c.c_ji + b.translation;
    if ((pa - pb).squaredNorm() < tau_c) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(contacts.size());
}

double shape_chamfer(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts) {
  if (pred.size() != parts.size() || gt.size() != parts.size())
    throw InvalidArgument("shape_chamfer: pose and part counts differ");
  PointSet a, b;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pa = apply_pose(pred[i], parts[i].points());
    const auto pb = apply_pose(gt[i], parts[i].points());
    a.insert(a.end(), pa.begin(), pa.end());
    b.insert(b.end(), pb.begin(), pb.end());
  }
  return chamfer(a, b) / static_cast<double>(a.size());
}

ShapeMetrics evaluate_poses(const AssemblySample& sample, std::span<const Pose> pred, const MetricThresholds& thresholds) {
  if (pred.size() != sample.n_parts()) throw InvalidArgument("evaluate_poses: pose count differs from part count");
  const auto matching = match_equivalent(pred, sample.gt_poses, sample.parts, sample.partition);
  const auto matched = matching.apply(sample.gt_poses);
  std::vector<Pose> by_label(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) by_label[matching.gt_of[i]] = pred[i];
  ShapeMetrics m;
  m.id = sample.id;
  m.scd = shape_chamfer(pred, sample.gt_poses, sample.parts);
  m.pa = part_accuracy(pred, matched, sample.parts, thresholds.tau_p);
  m.ca = connectivity_accuracy(by_label, sample.contacts, thresholds.tau_c);
  return m;
}

MetricReport MetricReport::aggregate(std::vector<ShapeMetrics> shapes) {
  MetricReport r;
  if (shapes.empty()) throw InvalidArgument("MetricReport: no shapes to aggregate");
  for (const auto& s : shapes) {
    r.scd += s.scd;
    r.pa += s.pa;
    if (s.ca) {
      r.ca += *s.ca;
      ++r.ca_shapes;
    }
  }
  r.scd /= static_cast<double>(shapes.size());
  r.pa /= static_cast<double>(shapes.size());
  if (r.ca_shapes > 0) r.ca /= static_cast<double>(r.ca_shapes);
  r.shapes = std::move(shapes);
  return r;
}

void MetricReport::write_jsonl(std::ostream& out, const std::string& label) const {
  for (const auto& s : shapes) {
    nlohmann::json j{{"type", label}, {"id", s.id}, {"scd", s.scd}, {"pa", s.pa}};
    j["ca"] = s.ca ? nlohmann::json(*s.ca) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
  nlohmann::json summary{{"type", label + "_summary"}, {"shapes", shapes.size()}, {"scd", scd},
                         {"pa", pa},                   {"ca", ca},               {"ca_shapes", ca_shapes}};
  out << summary.dump() << '\n';
}

std::string MetricReport::summary_table() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-8s %14s\n%-8s %14zu\n%-8s %14.6g\n%-8s %14.2f\n%-8s %14.2f  (%zu shapes with contacts)\n", "metric",
                "value", "shapes", shapes.size(), "SCD", scd, "PA (%)", pa, "CA (%)", ca, ca_shapes);
  return buf;
}

std::uint64_t eval_seed(std::uint64_t seed, std::uint64_t sample_id, std::uint64_t branch) {
  return derive_seed({seed, 0xe7a1ULL, sample_id, branch});
}

MmdResult mmd_select(const AssemblyModel& model, const AssemblySample& sample, std::size_t k, std::uint64_t seed,
                     const MetricThresholds& thresholds) {
  if (k == 0) throw InvalidArgument("mmd_select: k must be >= 1");
  ad::NoGradScope no_grad;
  const auto features = model.pointnet_encode(sample.parts);
  MmdResult r;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < k; ++b) {
    const auto poses = predict_sample(model, sample, features, eval_seed(seed, sample.id, b));
    auto pred = poses_of(poses.back(), sample.n_parts());
    const double scd = shape_chamfer(pred, sample.gt_poses, sample.parts);
    r.branch_scd.push_back(scd);
    if (scd < best) {
      best = scd;
      r.best = b;
      r.poses = std::move(pred);
    }
  }
  r.metrics = evaluate_poses(sample, r.poses, thresholds);
  return r;
}

double variability(const AssemblyModel& model, const AssemblySample& sample, std::size_t e, std::uint64_t seed,
                   const LossWeights& weights) {
  if (e == 0) throw InvalidArgument("variability: E must be >= 1");
  ad::NoGradScope no_grad;
  const auto features = model.pointnet_encode(sample.parts);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < e; ++b) {
    const auto poses = predict_sample(model, sample, features, eval_seed(seed, sample.id, b));
    const auto pred = poses_of(poses.back(), sample.n_parts());
    const auto matched = match_equivalent(pred, sample.gt_poses, sample.parts, sample.partition).apply(sample.gt_poses);
    const double loss = assembly_loss(pred, matched, sample.parts, weights).total;
    lo = std::min(lo, loss);
    hi = std::max(hi, loss);
  }
  return hi - lo;
}

ShapeMetrics inprocess_part_metrics(const AssemblySample& sample, std::size_t query, std::span<const std::size_t> memory,
                                    const Pose& predicted, const MetricThresholds& thresholds) {
  const std::size_t n = sample.n_parts();
  if (query >= n) throw InvalidArgument("inprocess_part_metrics: query out of range");
  std::vector<char> present(n, 0);
  for (auto m : memory) {
    if (m >= n || m == query) throw InvalidArgument("inprocess_part_metrics: bad memory index");
    present[m] = 1;
  }
  // The placed part may legitimately fill any absent slot of its equivalence class.
  const auto& part = sample.parts[query];
  const auto posed = apply_pose(predicted, part.points());
  std::size_t target = query;
  double best = std::numeric_limits<double>::infinity();
  for (auto c : sample.partition.classes()[sample.partition.class_of(query)]) {
    if (present[c]) continue;
    const double cost = chamfer(posed, apply_pose(sample.gt_poses[c], sample.parts[c].points()));
    if (cost < best) {
      best = cost;
      target = c;
    }
  }

  ShapeMetrics m;
  m.id = sample.id;
  m.pa = part_chamfer(predicted, sample.gt_poses[target], part) < thresholds.tau_p ? 100.0 : 0.0;

  std::vector<ContactPair> pairs;
  for (const auto& c : sample.contacts)
    if ((c.i == target && present[c.j]) || (c.j == target && present[c.i])) pairs.push_back(c);
  std::vector<Pose> poses = sample.gt_poses;
  poses[target] = predicted;
  m.ca = connectivity_accuracy(poses, pairs, thresholds.tau_c);

  PointSet pred_shape = posed;
  PointSet gt_shape = apply_pose(sample.gt_poses[target], sample.parts[target].points());
  for (auto i : memory) {
    const auto w = apply_pose(sample.gt_poses[i], sample.parts[i].points());
    pred_shape.insert(pred_shape.end(), w.begin(), w.end());
    gt_shape.insert(gt_shape.end(), w.begin(), w.end());
  }
  m.scd = chamfer(pred_shape, gt_shape) / static_cast<double>(pred_shape.size());
  return m;
}

ShapeMetrics inprocess_eval(const AssemblyModel& model, const AssemblySample& sample, const InprocessOptions& options) {
  const std::size_t n = sample.n_parts();
  if (n < 2) throw InvalidArgument("inprocess_eval: needs a shape with at least 2 parts");
  if (options.k == 0) throw InvalidArgument("inprocess_eval: k must be >= 1");
  ad::NoGradScope no_grad;
  const auto features = model.pointnet_encode(sample.parts);
  std::vector<ShapeMetrics> per_part;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    std::vector<std::size_t> memory = others;
    if (options.memory_drop > 0.0) {
      memory.clear();
      for (auto k : drop_survivors(others.size(), options.memory_drop, derive_seed({options.seed, sample.id, i, 0xd7})))
        memory.push_back(others[k]);
    }
    ShapeMetrics chosen;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < options.k; ++b) {
      const auto poses =
          predict_inprocess(model, sample, i, memory, features, derive_seed({options.seed, sample.id, i, b}));
      const auto m = inprocess_part_metrics(sample, i, memory, poses_of(poses.back(), 1)[0], options.thresholds);
      if (m.scd < best) {
        best = m.scd;
        chosen = m;
      }
    }
    per_part.push_back(chosen);
  }
  const auto agg = MetricReport::aggregate(std::move(per_part));
  ShapeMetrics out;
  out.id = sample.id;
  out.scd = agg.scd;
  out.pa = agg.pa;
  if (agg.ca_shapes > 0) out.ca = agg.ca;
  return out;
}

}  // namespace instformer
