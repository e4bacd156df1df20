#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "instformer/autodiff.hpp"
#include "instformer/geom.hpp"
#include "instformer/instance_encoding.hpp"
#include "instformer/model.hpp"
#include "instformer/sample.hpp"

namespace instformer {

/// How the Chamfer terms of the loss combine their nearest-neighbour distances: summed, or
/// averaged within each direction (sum_a / |A| + sum_b / |B|).
enum class ChamferReduction { sum, mean };

std::string_view to_string(ChamferReduction r);
ChamferReduction chamfer_reduction_from_string(std::string_view name);

struct LossWeights {
  double translation = 1.0;
  double rotation = 10.0;
  double shape = 1.0;
  ChamferReduction chamfer = ChamferReduction::sum;
};

struct LossBreakdown {
  double translation = 0.0;
  double rotation = 0.0;
  double shape = 0.0;
  double total = 0.0;
};

/// Loss stack evaluated on plain poses (no gradient):
/// translation = sum |t_i - t*_i|^2, rotation = sum_i chamfer(R_i p_i, R*_i p_i),
/// shape = chamfer of the two assemblies, total = weighted sum.
LossBreakdown assembly_loss(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                            const LossWeights& weights = {});

struct LossTerms {
  ad::Tensor translation;
  ad::Tensor rotation;
  ad::Tensor shape;
  ad::Tensor total;

  LossBreakdown values() const;
};

/// Differentiable version; `pred` is a [>=N, 7] pose tensor (only the first N rows are used).
LossTerms assembly_loss(const ad::Tensor& pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                        const LossWeights& weights = {});

/// Relabeling of ground truth: prediction i is compared against GT part gt_of[i].
struct Matching {
  std::vector<std::size_t> gt_of;

  static Matching identity(std::size_t n);
  std::vector<Pose> apply(std::span<const Pose> gt) const;
};

/// Hungarian matching inside each equivalence class with cost
/// chamfer(T_pred_i(p_i), T_gt_j(p_j)); singleton classes keep their label.
Matching match_equivalent(std::span<const Pose> pred, std::span<const Pose> gt, std::span<const PartCloud> parts,
                          const EquivalencePartition& partition);

/// [N,4] unit quaternions -> [N,9] row-major rotation matrices.
ad::Tensor quat_to_matrix(const ad::Tensor& q);
/// Symmetric squared Chamfer distance between [n,3] and [m,3] point tensors (scalar).
ad::Tensor chamfer_loss(const ad::Tensor& a, const ad::Tensor& b, ChamferReduction reduction = ChamferReduction::sum);

/// Value-level counterpart of chamfer_loss.
double chamfer_reduced(std::span<const Vec3> a, std::span<const Vec3> b, ChamferReduction reduction);

/// Seed of one noise branch.
std::uint64_t branch_seed(std::uint64_t global_seed, std::uint64_t epoch, std::uint64_t sample_id, std::uint64_t branch);
/// Per-part N(0,1) noise, n_parts x noise_dim values.
std::vector<double> branch_noise(const ModelConfig& config, std::size_t n_parts, std::uint64_t seed);

/// Runs the encoder on a complete sample with precomputed PointNet features.
PoseSequence predict_sample(const AssemblyModel& model, const AssemblySample& sample, const ad::Tensor& features,
                            std::uint64_t noise_seed);

/// Intermediate supervision: per-layer matched losses and their mean total.
struct SequenceLoss {
  ad::Tensor mean_total;
  std::vector<LossBreakdown> layers;
  std::vector<Matching> matchings;
};

SequenceLoss sequence_loss(const PoseSequence& poses, std::span<const Pose> gt, std::span<const PartCloud> parts,
                           const EquivalencePartition& partition, const LossWeights& weights = {});

/// In-process forward: the encoder sees `memory` parts fixed at their GT poses, the decoder places `query`.
/// `features` holds the PointNet features of every part of the sample.
PoseSequence predict_inprocess(const AssemblyModel& model, const AssemblySample& sample, std::size_t query,
                               std::span<const std::size_t> memory, const ad::Tensor& features, std::uint64_t noise_seed);

/// Layer-averaged loss of a single placed part. Per layer the target is the GT slot among `candidates`
/// (parts interchangeable with the query that are absent from memory) closest to the prediction.
SequenceLoss inprocess_loss(const PoseSequence& poses, const AssemblySample& sample, std::size_t query,
                            std::span<const std::size_t> candidates, const LossWeights& weights = {});

struct MonOptions {
  std::size_t n = 5;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  LossWeights weights;
};

struct MonResult {
  double loss = 0.0;  // min over branches of the layer-averaged matched total
  std::size_t best = 0;
  std::vector<double> branch_losses;
  LossBreakdown final_layer;  // breakdown of the best branch's last layer
  ad::Tensor taped;           // best branch re-evaluated on the active tape; undefined without one
};

/// Min-of-N objective. Branches are evaluated without recording; if a tape is active the winning
/// branch is replayed on it so only that branch receives gradient.
MonResult mon_loss(const AssemblyModel& model, const AssemblySample& sample, const MonOptions& options);

}  // namespace instformer
