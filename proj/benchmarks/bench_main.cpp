#include <benchmark/benchmark.h>

#include <random>

#include "lnpt/data.hpp"
#include "lnpt/ops.hpp"
#include "lnpt/pruning.hpp"
#include "lnpt/second_order.hpp"

using namespace lnpt;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(gen);
  return v;
}

struct Student {
  Network net{preset("mlp-small", {2}, 4)};
  Network teacher{preset("mlp-teacher", {2}, 4)};
  Parameters theta = net.init(0);
  ScoreBatch batch;

  Student() {
    batch.inputs = net.batch(random_values(80, 1), 40);
    batch.teacher_features = teacher.forward(teacher.init(1), batch.inputs).feature_map;
    batch.labels.assign(40, 0);
  }
};

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a({n, n}, random_values(n * n, 1)), b({n, n}, random_values(n * n, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_ForwardBackward(benchmark::State& state) {
  Student s;
  Objective f = feature_objective(s.net, s.batch);
  for (auto _ : state) benchmark::DoNotOptimize(value_and_grad(f, s.theta.values()));
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

static void BM_Hvp(benchmark::State& state) {
  Student s;
  Objective f = feature_objective(s.net, s.batch);
  auto v = random_values(s.theta.size(), 3);
  for (auto _ : state) benchmark::DoNotOptimize(hvp(f, s.theta.values(), v));
}
BENCHMARK(BM_Hvp)->Unit(benchmark::kMillisecond);

static void BM_ScoreLnpt(benchmark::State& state) {
  Student s;
  Objective f = feature_objective(s.net, s.batch);
  PruneConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(score_lnpt(f, s.theta.values(), cfg));
}
BENCHMARK(BM_ScoreLnpt)->Unit(benchmark::kMillisecond);

static void BM_MakeMask(benchmark::State& state) {
  Student s;
  auto scores = score_random(s.theta.size(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(make_mask(s.net.layout(), scores, 0.95));
}
BENCHMARK(BM_MakeMask)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
