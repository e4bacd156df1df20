#include "instformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "instformer/checkpoint.hpp"
#include "instformer/error.hpp"
#include "instformer/rng.hpp"
#include "instformer/synthetic.hpp"

namespace instformer {

namespace {

void check_adam(const AdamConfig& c, const char* who) {
  if (!(c.lr >= 0.0) || !(c.weight_decay >= 0.0) || !(c.beta1 >= 0.0 && c.beta1 < 1.0) ||
      !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.eps > 0.0))
    throw InvalidArgument(std::string(who) + ": invalid optimizer settings");
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void append_line(const std::string& run_dir, const std::string& file, const std::string& line) {
  if (run_dir.empty()) return;
  std::ofstream out(std::filesystem::path(run_dir) / file, std::ios::app);
  if (!out) throw Error("cannot append to " + (std::filesystem::path(run_dir) / file).string());
  out << line << '\n';
}

nlohmann::json to_json(const EpochRecord& e, const std::string& label, std::uint64_t seed) {
  nlohmann::json j{{"type", label},
                   {"epoch", e.epoch},
                   {"loss", e.loss},
                   {"translation", e.final_layer.translation},
                   {"rotation", e.final_layer.rotation},
                   {"shape", e.final_layer.shape},
                   {"total", e.final_layer.total},
                   {"seconds", e.seconds},
                   {"seed", seed}};
  if (e.val_pa) {
    j["val_pa"] = *e.val_pa;
    j["val_scd"] = *e.val_scd;
    j["val_ca"] = e.val_ca ? nlohmann::json(*e.val_ca) : nlohmann::json(nullptr);
  }
  return j;
}

}  // namespace

void adamw_step(ParameterStore& params, AdamState& state, const AdamConfig& c) {
  auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& [name, t] : entries) {
      state.m.emplace_back(t.size(), 0.0);
      state.v.emplace_back(t.size(), 0.0);
    }
  }
  if (state.m.size() != entries.size()) throw InvalidArgument("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& [name, t] = entries[k];
    if (!t.requires_grad()) continue;
    const auto g = t.grad();
    for (double x : g)
      if (!std::isfinite(x)) throw NumericError("adamw_step: non-finite gradient in parameter " + name);
    auto& p = t.mutable_value();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) throw InvalidArgument("adamw_step: state size mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - c.lr * c.weight_decay;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void TrainConfig::validate() const {
  check_adam(optimizer, "TrainConfig");
  if (batch_size == 0 || epochs == 0 || mon_n == 0 || val_k == 0 || eval_every == 0)
    throw InvalidArgument("TrainConfig: batch_size, epochs, mon_n, val_k and eval_every must be >= 1");
  if (!(part_drop >= 0.0 && part_drop < 1.0)) throw InvalidArgument("TrainConfig: part_drop must lie in [0, 1)");
}

void FinetuneConfig::validate() const {
  check_adam(optimizer, "FinetuneConfig");
  if (batch_size == 0 || epochs == 0 || mon_n == 0)
    throw InvalidArgument("FinetuneConfig: batch_size, epochs and mon_n must be >= 1");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw InvalidArgument("FinetuneConfig: drop_prob must lie in [0, 1)");
}

void RunRecord::write_jsonl(std::ostream& out, const std::string& label) const {
  for (const auto& e : epochs) out << to_json(e, label, seed).dump() << '\n';
}

void check_compatible(const AssemblyModel& model, const std::vector<AssemblySample>& samples) {
  const auto& c = model.config();
  for (const auto& s : samples) {
    if (s.n_parts() > c.max_parts)
      throw InvalidArgument("dataset/model mismatch: sample " + std::to_string(s.id) + " has " +
                            std::to_string(s.n_parts()) + " parts, model max_parts is " + std::to_string(c.max_parts));
    for (const auto& p : s.parts)
      if (p.size() != c.n_pc)
        throw InvalidArgument("dataset/model mismatch: sample " + std::to_string(s.id) + " has parts with " +
                              std::to_string(p.size()) + " points, model n_pc is " + std::to_string(c.n_pc));
  }
}

RunRecord train_run(AssemblyModel& model, const std::vector<AssemblySample>& train,
                    const std::vector<AssemblySample>& val, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw InvalidArgument("train_run: empty training split");
  check_compatible(model, train);
  check_compatible(model, val);
  const auto& val_set = val.empty() ? train : val;
  if (!config.run_dir.empty()) std::filesystem::create_directories(config.run_dir);

  RunRecord record;
  record.seed = config.seed;
  AdamState state;
  auto& params = model.parameters();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = shuffled(train.size(), derive_seed({config.seed, epoch, 0x5u}));
    EpochRecord e;
    e.epoch = epoch;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      params.zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const AssemblySample& original = train[order[k]];
        const AssemblySample sample =
            config.part_drop > 0.0
                ? part_drop(original, config.part_drop, derive_seed({config.seed, epoch, original.id, 0xd7}))
                : original;
        ad::Tape tape;
        ad::TapeScope scope(tape);
        const auto result = mon_loss(model, sample, {config.mon_n, config.seed, epoch, config.weights});
        tape.backward(ad::scale(result.taped, inv));
        e.loss += result.loss;
        e.final_layer.translation += result.final_layer.translation;
        e.final_layer.rotation += result.final_layer.rotation;
        e.final_layer.shape += result.final_layer.shape;
        e.final_layer.total += result.final_layer.total;
      }
      adamw_step(params, state, config.optimizer);
    }
    const double n = static_cast<double>(train.size());
    e.loss /= n;
    e.final_layer.translation /= n;
    e.final_layer.rotation /= n;
    e.final_layer.shape /= n;
    e.final_layer.total /= n;

    const bool last = epoch + 1 == config.epochs;
    if ((epoch + 1) % config.eval_every == 0 || last) {
      const auto report = evaluate_run(model, val_set, config.val_k, config.seed, config.thresholds);
      e.val_pa = report.pa;
      e.val_scd = report.scd;
      if (report.ca_shapes > 0) e.val_ca = report.ca;
      if (report.pa > record.best_val_pa) {
        record.best_val_pa = report.pa;
        record.best_epoch = epoch;
        if (!config.run_dir.empty())
          save_checkpoint(model, (std::filesystem::path(config.run_dir) / "best.ckpt").string());
      }
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    append_line(config.run_dir, "records.jsonl", to_json(e, "epoch", config.seed).dump());
    record.epochs.push_back(e);
    if (config.stop_at_pa && e.val_pa && *e.val_pa >= *config.stop_at_pa) break;
  }
  if (!config.run_dir.empty()) save_checkpoint(model, (std::filesystem::path(config.run_dir) / "last.ckpt").string());
  return record;
}

MetricReport evaluate_run(const AssemblyModel& model, const std::vector<AssemblySample>& samples, std::size_t k,
                          std::uint64_t seed, const MetricThresholds& thresholds) {
  if (samples.empty()) throw InvalidArgument("evaluate_run: empty split");
  check_compatible(model, samples);
  std::vector<ShapeMetrics> shapes;
  for (const auto& s : samples) shapes.push_back(mmd_select(model, s, k, seed, thresholds).metrics);
  return MetricReport::aggregate(std::move(shapes));
}

MetricReport evaluate_inprocess(const AssemblyModel& model, const std::vector<AssemblySample>& samples,
                                const InprocessOptions& options) {
  check_compatible(model, samples);
  std::vector<ShapeMetrics> shapes;
  for (const auto& s : samples)
    if (s.n_parts() >= 2) shapes.push_back(inprocess_eval(model, s, options));
  if (shapes.empty()) throw InvalidArgument("evaluate_inprocess: no shape with at least two parts");
  return MetricReport::aggregate(std::move(shapes));
}

std::vector<double> inprocess_finetune(AssemblyModel& model, const std::vector<AssemblySample>& train,
                                       const FinetuneConfig& config) {
  config.validate();
  std::vector<const AssemblySample*> usable;
  for (const auto& s : train)
    if (s.n_parts() >= 2) usable.push_back(&s);
  if (usable.empty()) throw InvalidArgument("inprocess_finetune: no training shape with at least two parts");
  check_compatible(model, train);
  if (!model.has_decoder()) model.add_decoder(config.seed);
  auto& params = model.parameters();
  params.set_all_trainable(false);
  params.set_trainable("decoder.", true);
  params.set_trainable("decoder_head.", true);
  if (!config.run_dir.empty()) std::filesystem::create_directories(config.run_dir);

  std::vector<double> losses;
  AdamState state;
  try {
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      const auto order = shuffled(usable.size(), derive_seed({config.seed, epoch, 0xf5u}));
      double epoch_loss = 0.0;
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::size_t end = std::min(order.size(), b + config.batch_size);
        const double inv = 1.0 / static_cast<double>(end - b);
        params.zero_grad();
        for (std::size_t k = b; k < end; ++k) {
          const AssemblySample& s = *usable[order[k]];
          Rng rng(derive_seed({config.seed, epoch, s.id, 0x9u}));
          const std::size_t query = static_cast<std::size_t>(rng() % s.n_parts());
          std::vector<std::size_t> others;
          for (std::size_t j = 0; j < s.n_parts(); ++j)
            if (j != query) others.push_back(j);
          std::vector<std::size_t> memory;
          for (auto m : drop_survivors(others.size(), config.drop_prob, rng())) memory.push_back(others[m]);
          std::vector<std::size_t> candidates;
          for (auto c : s.partition.classes()[s.partition.class_of(query)])
            if (std::find(memory.begin(), memory.end(), c) == memory.end()) candidates.push_back(c);

          ad::Tensor features;
          double best = std::numeric_limits<double>::infinity();
          std::uint64_t best_seed = 0;
          {
            ad::NoGradScope no_grad;
            features = model.pointnet_encode(s.parts);
            for (std::size_t j = 0; j < config.mon_n; ++j) {
              const auto seed = branch_seed(config.seed, epoch, s.id, j);
              const auto poses = predict_inprocess(model, s, query, memory, features, seed);
              const double value = inprocess_loss(poses, s, query, candidates, config.weights).mean_total.item();
              if (value < best) {
                best = value;
                best_seed = seed;
              }
            }
          }
          ad::Tape tape;
          ad::TapeScope scope(tape);
          const auto poses = predict_inprocess(model, s, query, memory, features, best_seed);
          const auto loss = inprocess_loss(poses, s, query, candidates, config.weights).mean_total;
          tape.backward(ad::scale(loss, inv));
          epoch_loss += best;
        }
        adamw_step(params, state, config.optimizer);
      }
      epoch_loss /= static_cast<double>(usable.size());
      losses.push_back(epoch_loss);
      append_line(config.run_dir, "finetune.jsonl",
                  nlohmann::json{{"type", "finetune_epoch"}, {"epoch", epoch}, {"loss", epoch_loss}, {"seed", config.seed}}
                      .dump());
    }
  } catch (...) {
    params.set_all_trainable(true);
    throw;
  }
  params.set_all_trainable(true);
  if (!config.run_dir.empty()) save_checkpoint(model, (std::filesystem::path(config.run_dir) / "decoder.ckpt").string());
  return losses;
}

}  // namespace instformer
