#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "instformer/checkpoint.hpp"
#include "instformer/error.hpp"
#include "instformer/synthetic.hpp"
#include "instformer/train.hpp"
#include "support.hpp"

using namespace instformer;
using namespace testing_support;

namespace {

std::vector<AssemblySample> chairs(std::size_t count, std::size_t n_pc, std::uint64_t seed = 0) {
  GeneratorSpec spec;
  spec.n_pc = n_pc;
  spec.seed = seed;
  return generate(spec, count);
}

ModelConfig tiny_for_chairs() {
  ModelConfig c = model_preset("tiny");
  c.n_layers = 2;
  return c;
}

std::uint64_t fingerprint(const ParameterStore& params, std::string_view skip_prefix) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (const auto& [name, t] : params.entries()) {
    if (!skip_prefix.empty() && name.rfind(skip_prefix, 0) == 0) continue;
    for (double v : t.value()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = mix64(h ^ bits);
    }
  }
  return h;
}

double batch_loss(AssemblyModel& m, const std::vector<AssemblySample>& batch, const LossWeights& w, bool backward) {
  double total = 0.0;
  for (const auto& s : batch) {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto r = mon_loss(m, s, {1, 17, 0, w});
    if (backward) tape.backward(ad::scale(r.taped, 1.0 / batch.size()));
    total += r.loss;
  }
  return total / batch.size();
}

}  // namespace

TEST(AdamW, MatchesHandComputedUpdate) {
  ParameterStore params;
  auto p = params.add("w", {2}, {1.0, -2.0});
  AdamConfig c{0.1, 0.01, 0.9, 0.999, 1e-8};
  AdamState state;
  std::vector<double> m(2, 0.0), v(2, 0.0), x{1.0, -2.0};
  for (int step = 1; step <= 3; ++step) {
    params.zero_grad();
    const std::vector<double> g{0.5 * step, -1.5};
    ad::accumulate(*p.node(), g);
    adamw_step(params, state, c);
    for (int i = 0; i < 2; ++i) {
      x[i] *= 1.0 - c.lr * c.weight_decay;
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(c.beta1, step));
      const double vh = v[i] / (1 - std::pow(c.beta2, step));
      x[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
      EXPECT_DOUBLE_EQ(p.value()[i], x[i]);
    }
  }
  EXPECT_EQ(state.step, 3u);
}

TEST(AdamW, FrozenAndNonFiniteParameters) {
  ParameterStore params;
  auto a = params.add("a", {1}, {1.0});
  auto b = params.add("b", {1}, {2.0});
  b.set_requires_grad(false);
  AdamState state;
  ad::accumulate(*a.node(), std::vector<double>{1.0});
  adamw_step(params, state, {});
  EXPECT_NE(a.value()[0], 1.0);
  EXPECT_EQ(b.value()[0], 2.0);
  a.node()->grad_buffer()[0] = std::nan("");
  EXPECT_THROW(adamw_step(params, state, {}), NumericError);
}

TEST(Train, ZeroLearningRateLeavesParametersFrozen) {
  const auto data = chairs(4, 16);
  AssemblyModel m(tiny_for_chairs(), 1);
  const auto before = m.parameters().snapshot();
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.mon_n = 2;
  c.val_k = 1;
  c.optimizer.lr = 0.0;
  train_run(m, data, {}, c);
  EXPECT_EQ(m.parameters().snapshot(), before);
}

TEST(Train, LossOnFixedBatchDecreasesOverFirstStepsAtDeskConfig) {
  const auto batch = chairs(4, 128, 3);
  LossWeights w;
  w.chamfer = ChamferReduction::mean;
  AdamConfig opt;
  opt.lr = 1e-3;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    AssemblyModel m(model_preset("desk"), seed);
    AdamState state;
    double previous = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 5; ++step) {
      m.parameters().zero_grad();
      const double loss = batch_loss(m, batch, w, true);
      EXPECT_LT(loss, previous) << "seed " << seed << " step " << step;
      previous = loss;
      adamw_step(m.parameters(), state, opt);
    }
    EXPECT_LT(batch_loss(m, batch, w, false), previous) << "seed " << seed;
  }
}

TEST(Train, SameSeedGivesIdenticalCheckpointsAndRecords) {
  const auto data = chairs(6, 16);
  const auto dir = std::filesystem::path(::testing::TempDir()) / "instformer_train_det";
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<std::string> records;
  for (int run = 0; run < 2; ++run) {
    std::filesystem::remove_all(dir);
    AssemblyModel m(tiny_for_chairs(), 4);
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 3;
    c.mon_n = 2;
    c.val_k = 2;
    c.part_drop = 0.2;
    c.run_dir = dir.string();
    const auto r = train_run(m, data, {}, c);
    EXPECT_EQ(r.epochs.size(), 3u);
    EXPECT_TRUE(std::filesystem::exists(dir / "best.ckpt"));
    std::ifstream in(dir / "last.ckpt", std::ios::binary);
    images.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    EXPECT_EQ(images.back(), serialize_checkpoint(m));
    std::ostringstream text;
    r.write_jsonl(text);
    std::string cleaned;
    std::istringstream lines(text.str());
    for (std::string line; std::getline(lines, line);) {
      auto j = nlohmann::json::parse(line);
      j.erase("seconds");
      cleaned += j.dump() + "\n";
    }
    records.push_back(cleaned);
  }
  EXPECT_EQ(images[0], images[1]);
  EXPECT_EQ(records[0], records[1]);
  std::filesystem::remove_all(dir);
}

TEST(Train, RejectsIncompatibleData) {
  AssemblyModel m(tiny_for_chairs(), 5);
  TrainConfig c;
  c.epochs = 1;
  EXPECT_THROW(train_run(m, chairs(2, 32), {}, c), InvalidArgument);
  EXPECT_THROW(train_run(m, {}, {}, c), InvalidArgument);
  c.batch_size = 0;
  EXPECT_THROW(train_run(m, chairs(2, 16), {}, c), InvalidArgument);
}

TEST(Evaluate, GroundTruthReport) {
  const auto data = chairs(3, 16);
  AssemblyModel m(tiny_for_chairs(), 6);
  const auto r = evaluate_run(m, data, 2, 0);
  EXPECT_EQ(r.shapes.size(), 3u);
  EXPECT_GE(r.pa, 0.0);
  EXPECT_LE(r.pa, 100.0);
}

TEST(Finetune, FreezesEncoderAndReducesDecoderLoss) {
  const auto data = chairs(16, 16);
  for (std::uint64_t seed = 7; seed < 10; ++seed) {
    AssemblyModel m(tiny_for_chairs(), seed);
    TrainConfig pre;
    pre.epochs = 3;
    pre.batch_size = 4;
    pre.mon_n = 2;
    pre.val_k = 1;
    pre.optimizer.lr = 1e-3;
    pre.weights.chamfer = ChamferReduction::mean;
    train_run(m, data, {}, pre);
    const auto encoder_hash = fingerprint(m.parameters(), "decoder");

    FinetuneConfig c;
    c.epochs = 10;
    c.batch_size = 4;
    c.mon_n = 2;
    c.seed = seed;
    c.optimizer.lr = 1e-3;
    c.weights.chamfer = ChamferReduction::mean;
    const auto losses = inprocess_finetune(m, data, c);
    ASSERT_EQ(losses.size(), 10u);
    // Each epoch places a different random part, so compare the first and last three epochs.
    const double head = (losses[0] + losses[1] + losses[2]) / 3.0;
    const double tail = (losses[7] + losses[8] + losses[9]) / 3.0;
    EXPECT_LT(tail, head) << "seed " << seed;
    EXPECT_EQ(fingerprint(m.parameters(), "decoder"), encoder_hash);
    EXPECT_TRUE(m.has_decoder());
    for (const auto& [name, t] : m.parameters().entries()) EXPECT_TRUE(t.requires_grad()) << name;
  }
}

TEST(Finetune, InprocessEvaluationCoversEveryShape) {
  const auto data = chairs(4, 16);
  AssemblyModel m(tiny_for_chairs(), 10);
  m.add_decoder(11);
  const auto report = evaluate_inprocess(m, data, {1, 0, 0.2, {}});
  EXPECT_EQ(report.shapes.size(), data.size());
  EXPECT_GE(report.pa, 0.0);
  EXPECT_LE(report.pa, 100.0);
}
