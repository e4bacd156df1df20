// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
// Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "instformer/checkpoint.hpp"
#include "instformer/grad_suite.hpp"
#include "instformer/hungarian.hpp"
#include "instformer/metrics.hpp"
#include "instformer/synthetic.hpp"
#include "instformer/train.hpp"
#include "support.hpp"

using namespace instformer;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<AssemblySample> chairs(std::size_t count, std::size_t n_pc, std::uint64_t seed) {
  GeneratorSpec spec;
  spec.n_pc = n_pc;
  spec.seed = seed;
  return generate(spec, count);
}

AssemblyModel clone(const AssemblyModel& m) { return deserialize_checkpoint(serialize_checkpoint(m)); }

// ---- 1 ------------------------------------------------------------------------------------

Outcome grad_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = full_grad_suite(model_preset("tiny"), 0, 2048);
  const double elapsed = seconds_since(t0);
  std::size_t probes = 0, skipped = 0;
  for (const auto& e : report.entries) {
    probes += e.probes;
    skipped += e.skipped;
  }
  const double worst = report.worst();
  return {worst < 1e-3 && elapsed < 120.0,
          fmt("max relative error %.3g over %zu probes (%zu straddling a kink left out), %.1f s", worst, probes, skipped,
              elapsed)};
}

// ---- 2 ------------------------------------------------------------------------------------

Outcome hungarian_oracle() {
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> size(1, 6);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = size(rng);
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (auto& row : cost)
      for (auto& c : row) c = u(rng);
    if (hungarian(cost).cost != brute_force_assignment(cost)) ++mismatches;
  }
  return {mismatches == 0, fmt("%zu of 1000 matrices differ from the exhaustive minimum", mismatches)};
}

// ---- 3 ------------------------------------------------------------------------------------

Outcome chamfer_oracle() {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> size(1, 64);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto a = random_points(rng, size(rng));
    const auto b = random_points(rng, size(rng));
    worst = std::max(worst, std::abs(chamfer(a, b) - naive_chamfer(a, b)));
  }
  return {worst <= 1e-12, fmt("max deviation from the double loop %.3g over 100 pairs", worst)};
}

// ---- 4 ------------------------------------------------------------------------------------

Outcome metric_identities() {
  std::vector<AssemblySample> samples;
  GeneratorSpec spec;
  spec.seed = 4;
  for (auto [cat, n] : {std::pair{Category::chair, 20}, {Category::table, 20}, {Category::lamp, 10}}) {
    spec.category = cat;
    for (auto& s : generate(spec, n)) samples.push_back(std::move(s));
  }
  double worst_scd = 0.0, min_pa = 100.0, min_ca = 100.0;
  std::size_t with_contacts = 0;
  for (const auto& s : samples) {
    const auto m = evaluate_poses(s, s.gt_poses);
    worst_scd = std::max(worst_scd, std::abs(m.scd));
    min_pa = std::min(min_pa, m.pa);
    if (m.ca) {
      ++with_contacts;
      min_ca = std::min(min_ca, *m.ca);
    }
  }
  return {worst_scd <= 1e-12 && min_pa == 100.0 && min_ca == 100.0 && with_contacts == samples.size(),
          fmt("%zu samples: max |SCD| %.3g, min PA %.1f, min CA %.1f (%zu with contacts)", samples.size(), worst_scd,
              min_pa, min_ca, with_contacts)};
}

// ---- 5 ------------------------------------------------------------------------------------

Outcome encoding_semantics() {
  GeneratorSpec spec;
  spec.seed = 5;
  const auto samples = generate(spec, 200);
  std::size_t bad = 0;
  for (const auto& s : samples) {
    const auto codes = instance_encode(s.partition, s.n_parts());
    bool ok = true;
    std::set<std::size_t> inter;
    for (std::size_t leg = 1; leg <= 4; ++leg) {
      ok &= codes[leg].intra_index() == codes[1].intra_index();
      inter.insert(codes[leg].inter_index());
      for (std::size_t other = 1; other < leg; ++other) {
        double dot = 0.0;
        for (std::size_t d = 0; d < codes[leg].inter.size(); ++d) dot += codes[leg].inter[d] * codes[other].inter[d];
        ok &= dot == 0.0;
      }
    }
    ok &= inter.size() == 4;
    std::vector<int> seen(s.n_parts(), 0);
    for (const auto& cls : s.partition.classes())
      for (auto p : cls) ++seen[p];
    ok &= std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
    if (!ok) ++bad;
  }
  return {bad == 0, fmt("%zu of %zu chairs violate the leg encoding or the partition", bad, samples.size())};
}

// ---- 6 ------------------------------------------------------------------------------------

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  auto config = cli::preset("desk");
  const auto data = chairs(16, config.model.n_pc, 6);
  AssemblyModel model(config.model, 6);
  TrainConfig train = config.train;
  train.epochs = 200;
  train.mon_n = 5;
  train.val_k = 10;
  train.eval_every = 10;
  train.stop_at_pa = 90.0;
  train.thresholds.tau_p = 0.01;
  const auto record = train_run(model, data, {}, train);
  const double elapsed = seconds_since(t0);
  const double pa = record.best_val_pa;
  return {pa >= 90.0 && elapsed <= 1800.0,
          fmt("train-set PA %.2f after %zu epochs, %.0f s", pa, record.epochs.size(), elapsed)};
}

// ---- 7 and 8: shared small configuration --------------------------------------------------

constexpr std::size_t kSmallPoints = 32;
constexpr std::size_t kTrainChairs = 64;
constexpr std::size_t kHeldOut = 256;
constexpr std::size_t kTrendEpochs = 40;

ModelConfig small_model(EncodingMode encoding) {
  ModelConfig c = model_preset("desk");
  c.d_model = 64;
  c.n_heads = 4;
  c.n_layers = 3;
  c.noise_dim = 16;
  c.max_parts = 8;
  c.n_pc = kSmallPoints;
  c.head_width = 64;
  c.ffn_multiplier = 2;
  c.encoding = encoding;
  return c;
}

TrainConfig small_train(std::uint64_t seed) {
  TrainConfig t = cli::preset("desk").train;
  t.epochs = kTrendEpochs;
  t.batch_size = 8;
  t.mon_n = 3;
  t.val_k = 1;
  t.eval_every = kTrendEpochs;
  t.seed = seed;
  return t;
}

const std::vector<AssemblySample>& trend_train() {
  static const auto data = chairs(kTrainChairs, kSmallPoints, 70);
  return data;
}

const std::vector<AssemblySample>& trend_held_out() {
  static const auto data = chairs(kHeldOut, kSmallPoints, 71);
  return data;
}

std::vector<AssemblyModel>& trained_with_encoding() {
  static std::vector<AssemblyModel> models;
  return models;
}

AssemblyModel train_small(EncodingMode encoding, std::uint64_t seed) {
  AssemblyModel m(small_model(encoding), seed);
  train_run(m, trend_train(), trend_train(), small_train(seed));
  return m;
}

const AssemblyModel& base_model(std::uint64_t seed) {
  auto& models = trained_with_encoding();
  while (models.size() <= seed) models.push_back(train_small(EncodingMode::both, models.size()));
  return models[seed];
}

Outcome encoding_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto& with = base_model(seed);
    const auto without = train_small(EncodingMode::none, seed);
    const double pa_with = evaluate_run(with, trend_held_out(), 5, 700 + seed).pa;
    const double pa_without = evaluate_run(without, trend_held_out(), 5, 700 + seed).pa;
    if (pa_with > pa_without) ++wins;
    per_seed += fmt(" seed %llu: %.2f vs %.2f;", static_cast<unsigned long long>(seed), pa_with, pa_without);
  }
  return {wins >= 2, fmt("held-out PA with vs without encoding,%s %zu/3 wins, %.0f s", per_seed.c_str(), wins,
                         seconds_since(t0))};
}

constexpr std::size_t kFinetuneEpochs = 20;
constexpr double kEvalMemoryDrop = 0.3;

Outcome partdrop_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t holds = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    double ca[2] = {0.0, 0.0};
    const double drops[2] = {0.2, 0.0};
    for (int v = 0; v < 2; ++v) {
      auto m = clone(base_model(seed));
      FinetuneConfig f;
      f.optimizer = small_train(seed).optimizer;
      f.weights = small_train(seed).weights;
      f.epochs = kFinetuneEpochs;
      f.batch_size = 8;
      f.mon_n = 3;
      f.seed = seed;
      f.drop_prob = drops[v];
      inprocess_finetune(m, trend_train(), f);
      InprocessOptions eval;
      eval.k = 1;
      eval.seed = 800 + seed;
      eval.memory_drop = kEvalMemoryDrop;
      ca[v] = evaluate_inprocess(m, trend_held_out(), eval).ca;
    }
    if (ca[0] >= ca[1]) ++holds;
    per_seed += fmt(" seed %llu: %.2f vs %.2f;", static_cast<unsigned long long>(seed), ca[0], ca[1]);
  }
  return {holds >= 2, fmt("incomplete-shape CA with drop 0.2 vs 0,%s %zu/3 hold, %.0f s", per_seed.c_str(), holds,
                          seconds_since(t0))};
}

// ---- 9 ------------------------------------------------------------------------------------

Outcome mon_property() {
  AssemblyModel m(small_model(EncodingMode::both), 9);
  m.randomize(90, 0.2);
  const auto data = chairs(50, kSmallPoints, 9);
  std::size_t violations = 0, nested = 0;
  for (const auto& s : data) {
    const auto one = mon_loss(m, s, {1, 9, 0, {}});
    const auto five = mon_loss(m, s, {5, 9, 0, {}});
    if (!(five.loss <= one.loss)) ++violations;
    if (five.branch_losses[0] == one.loss) ++nested;
  }
  return {violations == 0 && nested == data.size(),
          fmt("%zu of %zu samples with loss(5) > loss(1); %zu share the first branch exactly", violations, data.size(),
              nested)};
}

// ---- 10 -----------------------------------------------------------------------------------

Outcome variability_property() {
  const auto data = chairs(20, kSmallPoints, 10);
  AssemblyModel noisy(small_model(EncodingMode::both), 10);
  noisy.randomize(100, 0.2);
  auto quiet_config = small_model(EncodingMode::both);
  quiet_config.noise_dim = 0;
  AssemblyModel quiet(quiet_config, 10);
  quiet.randomize(100, 0.2);
  double min_noisy = std::numeric_limits<double>::infinity(), max_quiet = 0.0;
  std::size_t differing = 0;
  for (const auto& s : data) {
    min_noisy = std::min(min_noisy, variability(noisy, s, 10, 1));
    max_quiet = std::max(max_quiet, std::abs(variability(quiet, s, 10, 1)));
    const auto features = quiet.pointnet_encode(s.parts);
    const auto first = predict_sample(quiet, s, features, eval_seed(1, s.id, 0)).back().value();
    for (std::uint64_t b = 1; b < 10; ++b)
      if (predict_sample(quiet, s, features, eval_seed(1, s.id, b)).back().value() != first) ++differing;
  }
  return {min_noisy >= 0.0 && max_quiet <= 1e-12 && differing == 0,
          fmt("min V_E with noise %.3g; max |V_E| without noise %.3g; %zu non-identical noiseless predictions",
              min_noisy, max_quiet, differing)};
}

// ---- 11 -----------------------------------------------------------------------------------

Outcome determinism() {
  auto config = cli::preset("desk");
  const auto data = chairs(6, config.model.n_pc, 11);
  std::vector<std::vector<std::uint8_t>> images;
  for (int run = 0; run < 2; ++run) {
    const auto dir = fs::temp_directory_path() / ("instformer_acceptance_det_" + std::to_string(run));
    fs::remove_all(dir);
    AssemblyModel m(config.model, 11);
    TrainConfig t = config.train;
    t.epochs = 2;
    t.batch_size = 3;
    t.mon_n = 2;
    t.val_k = 2;
    t.part_drop = 0.2;
    t.seed = 11;
    t.run_dir = dir.string();
    train_run(m, data, {}, t);
    std::ifstream in(dir / "last.ckpt", std::ios::binary);
    images.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    fs::remove_all(dir);
  }
  const bool same = !images[0].empty() && images[0] == images[1];
  return {same, fmt("two runs wrote %zu and %zu checkpoint bytes, %s", images[0].size(), images[1].size(),
                    same ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", grad_suite},
      {"Hungarian oracle", hungarian_oracle},
      {"Chamfer oracle", chamfer_oracle},
      {"metric identities", metric_identities},
      {"instance encoding semantics", encoding_semantics},
      {"overfit 16 chairs", overfit},
      {"encoding ablation trend", encoding_ablation},
      {"PartDrop trend", partdrop_trend},
      {"Min-of-N property", mon_property},
      {"variability property", variability_property},
      {"determinism", determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::stoul(argv[i])));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << i + 1 << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
