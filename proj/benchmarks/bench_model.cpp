#include <benchmark/benchmark.h>

#include "instformer/losses.hpp"
#include "instformer/model.hpp"
#include "instformer/synthetic.hpp"

using namespace instformer;

namespace {

AssemblySample chair(std::size_t n_pc) {
  GeneratorSpec spec;
  spec.n_pc = n_pc;
  return generate_one(spec, 0).sample;
}

void BM_EncoderForward(benchmark::State& state) {
  const auto model = AssemblyModel(model_preset(state.range(0) ? "desk" : "tiny"), 1);
  const auto sample = chair(model.config().n_pc);
  const auto features = model.pointnet_encode(sample.parts);
  for (auto _ : state) benchmark::DoNotOptimize(predict_sample(model, sample, features, 3));
}
BENCHMARK(BM_EncoderForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PointNet(benchmark::State& state) {
  const auto model = AssemblyModel(model_preset("desk"), 1);
  const auto sample = chair(model.config().n_pc);
  for (auto _ : state) benchmark::DoNotOptimize(model.pointnet_encode(sample.parts));
}
BENCHMARK(BM_PointNet)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto model = AssemblyModel(model_preset("desk"), 1);
  const auto sample = chair(model.config().n_pc);
  const MonOptions options{static_cast<std::size_t>(state.range(0)), 0, 0, {}};
  for (auto _ : state) {
    model.parameters().zero_grad();
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto r = mon_loss(model, sample, options);
    tape.backward(r.taped);
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace
