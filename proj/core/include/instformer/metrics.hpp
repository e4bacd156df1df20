#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "instformer/geom.hpp"
#include "instformer/losses.hpp"
#include "instformer/model.hpp"
#include "instformer/sample.hpp"

namespace instformer {

struct MetricThresholds {
  double tau_p = 0.01;        // per-part mean Chamfer threshold
  double tau_c = 0.01;        // squared contact-gap threshold
  double tau_contact = 0.05;  // contact detection distance when no adjacency record exists
};

/// Contact points of connected pairs, found as the closest point pair in GT world space and stored
/// as the corresponding canonical points. With an empty `adjacency`, every pair whose GT clouds come
/// closer than `tau_contact` is connected.
std::vector<ContactPair> contact_pairs(std::span<const PartCloud> parts, std::span<const Pose> gt,
                                       std::span<const std::pair<std::size_t, std::size_t>> adjacency,
                                       double tau_contact = 0.05);
std::vector<ContactPair> contact_pairs(const AssemblySample& sample, double tau_contact = 0.05);

/// chamfer(T(p), T*(p)) divided by the part's point count.
double part_chamfer(const Pose& pred, const Pose& gt, const PartCloud& part);

/// Percentage of parts with part_chamfer below tau_p. `gt` must already be matched to `pred`.
double part_accuracy(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                     double tau_p = 0.01);

/// Percentage of contact pairs with |T_i(c_ij) - T_j(c_ji)|^2 below tau_c; `poses` are indexed by GT
/// label. Empty when there are no pairs.
std::optional<double> connectivity_accuracy(std::span<const Pose> poses, std::span<const ContactPair> contacts,
                                            double tau_c = 0.01);

/// Shape Chamfer distance between the two assemblies divided by the total point count.
double shape_chamfer(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts);

struct ShapeMetrics {
  std::uint64_t id = 0;
  double scd = 0.0;
  double pa = 0.0;
  std::optional<double> ca;
};

/// Matches `pred` within equivalence classes, then scores SCD, PA and CA.
ShapeMetrics evaluate_poses(const AssemblySample& sample, std::span<const Pose> pred,
                            const MetricThresholds& thresholds = {});

struct MetricReport {
  double scd = 0.0;
  double pa = 0.0;
  double ca = 0.0;
  std::size_t ca_shapes = 0;  // shapes with at least one contact pair
  std::vector<ShapeMetrics> shapes;

  /// Means over shapes; CA averages only shapes where it is defined.
  static MetricReport aggregate(std::vector<ShapeMetrics> shapes);
  /// One JSON record per shape followed by a summary record.
  void write_jsonl(std::ostream& out, const std::string& label = "eval") const;
  std::string summary_table() const;
};

/// Noise seed of evaluation branch `branch` for a sample; nested in the branch count.
std::uint64_t eval_seed(std::uint64_t seed, std::uint64_t sample_id, std::uint64_t branch);

struct MmdResult {
  std::vector<Pose> poses;  // final-layer prediction of the selected branch
  std::size_t best = 0;
  std::vector<double> branch_scd;
  ShapeMetrics metrics;
};

/// k noise-perturbed predictions; keeps the one with the smallest shape Chamfer distance to GT.
MmdResult mmd_select(const AssemblyModel& model, const AssemblySample& sample, std::size_t k, std::uint64_t seed,
                     const MetricThresholds& thresholds = {});

/// Gap between the largest and smallest matched final-layer loss over E predictions.
double variability(const AssemblyModel& model, const AssemblySample& sample, std::size_t e, std::uint64_t seed,
                   const LossWeights& weights = {});

struct InprocessOptions {
  std::size_t k = 1;
  std::uint64_t seed = 0;
  /// Probability of removing each memory part (incomplete-shape evaluation); 0 keeps all.
  double memory_drop = 0.0;
  MetricThresholds thresholds;
};

/// One in-process evaluation: metrics of part `query` placed by the decoder next to `memory` at GT.
ShapeMetrics inprocess_part_metrics(const AssemblySample& sample, std::size_t query, std::span<const std::size_t> memory,
                                    const Pose& predicted, const MetricThresholds& thresholds = {});

/// For every part i the encoder sees the other parts at GT and the decoder places part i;
/// the per-part metrics are averaged.
ShapeMetrics inprocess_eval(const AssemblyModel& model, const AssemblySample& sample, const InprocessOptions& options = {});

}  // namespace instformer
