#include <benchmark/benchmark.h>

#include <random>

#include "instformer/geom.hpp"
#include "instformer/hungarian.hpp"
#include "instformer/losses.hpp"
#include "instformer/rng.hpp"

using namespace instformer;

namespace {

PointSet cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointSet p(n);
  for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
  return p;
}

void BM_Chamfer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(n, 1), b = cloud(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Chamfer)->RangeMultiplier(2)->Range(64, 2048)->Complexity();

void BM_ChamferLossBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> va, vb;
  for (const auto& p : cloud(n, 3)) va.insert(va.end(), {p.x(), p.y(), p.z()});
  for (const auto& p : cloud(n, 4)) vb.insert(vb.end(), {p.x(), p.y(), p.z()});
  const auto a = ad::Tensor::parameter({n, 3}, va);
  const auto b = ad::Tensor::constant({n, 3}, vb);
  for (auto _ : state) {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    tape.backward(chamfer_loss(a, b));
  }
}
BENCHMARK(BM_ChamferLossBackward)->Arg(128)->Arg(1000);

void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (auto& row : cost)
    for (auto& c : row) c = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(cost));
}
BENCHMARK(BM_Hungarian)->DenseRange(2, 8, 2)->Arg(20);

void BM_Fps(benchmark::State& state) {
  const auto dense = cloud(1024, 6);
  for (auto _ : state) benchmark::DoNotOptimize(fps(dense, static_cast<std::size_t>(state.range(0)), 7));
}
BENCHMARK(BM_Fps)->Arg(128)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
