#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "instformer/losses.hpp"
#include "instformer/metrics.hpp"
#include "instformer/model.hpp"
#include "instformer/sample.hpp"

namespace instformer {

struct AdamConfig {
  double lr = 1.5e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One decoupled-weight-decay Adam update of every trainable parameter from its accumulated gradient.
/// Throws NumericError naming the parameter if a gradient is not finite.
void adamw_step(ParameterStore& params, AdamState& state, const AdamConfig& config);

struct TrainConfig {
  AdamConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t epochs = 200;
  std::size_t mon_n = 5;
  std::uint64_t seed = 0;
  /// MMD branches for validation during training.
  std::size_t val_k = 3;
  /// Validate every this many epochs (and always after the last one).
  std::size_t eval_every = 1;
  /// PartDrop probability applied to training samples; 0 disables it.
  double part_drop = 0.0;
  /// Ends the run after the first validation whose PA reaches this value.
  std::optional<double> stop_at_pa;
  LossWeights weights;
  MetricThresholds thresholds;
  /// Directory for records and checkpoints; empty keeps everything in memory.
  std::string run_dir;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean Min-of-N loss over the epoch's samples
  LossBreakdown final_layer;
  std::optional<double> val_pa;
  std::optional<double> val_ca;
  std::optional<double> val_scd;
  double seconds = 0.0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_pa = -1.0;

  void write_jsonl(std::ostream& out, const std::string& label = "epoch") const;
};

/// Min-of-N training with intermediate supervision. With a run directory it appends records.jsonl,
/// writes best.ckpt at the best validation PA and last.ckpt at the end.
/// An empty validation set validates on the training set.
RunRecord train_run(AssemblyModel& model, const std::vector<AssemblySample>& train,
                    const std::vector<AssemblySample>& val, const TrainConfig& config);

/// Per-shape MMD selection over k predictions, aggregated over the split.
MetricReport evaluate_run(const AssemblyModel& model, const std::vector<AssemblySample>& samples, std::size_t k,
                          std::uint64_t seed, const MetricThresholds& thresholds = {});

/// Aggregated in-process evaluation over shapes with at least two parts.
MetricReport evaluate_inprocess(const AssemblyModel& model, const std::vector<AssemblySample>& samples,
                                const InprocessOptions& options);

struct FinetuneConfig {
  AdamConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t epochs = 500;
  std::size_t mon_n = 5;
  std::uint64_t seed = 0;
  /// PartDrop probability applied to the encoded (already placed) parts.
  double drop_prob = 0.2;
  LossWeights weights;
  std::string run_dir;

  void validate() const;
};

/// Adds a decoder if needed, freezes PointNet, encoder and encoder head, and trains the decoder to
/// place one randomly chosen part next to the remaining ones. Returns the mean loss per epoch.
std::vector<double> inprocess_finetune(AssemblyModel& model, const std::vector<AssemblySample>& train,
                                       const FinetuneConfig& config);

/// Checks that samples fit the model (part count, points per part).
void check_compatible(const AssemblyModel& model, const std::vector<AssemblySample>& samples);

}  // namespace instformer
