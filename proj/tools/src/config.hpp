#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

#include "instformer/metrics.hpp"
#include "instformer/model.hpp"
#include "instformer/synthetic.hpp"
#include "instformer/train.hpp"

namespace instformer::cli {

struct EvalSettings {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  double memory_drop = 0.0;
  MetricThresholds thresholds;
};

/// Everything a command can be configured with. Sections: model, train, finetune, eval, generator.
struct CliConfig {
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  EvalSettings eval;
  GeneratorSpec generator;

  void validate() const;
};

/// "tiny", "desk" or "full".
CliConfig preset(std::string_view name);

nlohmann::json to_json(const CliConfig& config);

/// Overwrites the fields present in `patch`. Unknown sections or keys throw InvalidArgument.
void merge(CliConfig& config, const nlohmann::json& patch);

/// Applies "section.key=value"; the value is parsed as JSON, falling back to a plain string.
void apply_override(CliConfig& config, std::string_view assignment);

/// A preset name or the path of a JSON file; a file may name its base preset under "preset".
CliConfig load_config(const std::string& source);

}  // namespace instformer::cli
