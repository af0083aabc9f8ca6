#include <benchmark/benchmark.h>

#include "mlirl/irl.hpp"
#include "mlirl/objectives.hpp"
#include "mlirl/workbench.hpp"

using namespace mlirl;

namespace {

Instance bench_instance(int vocab, int horizon) {
  InstanceSpec spec;
  spec.vocab = vocab;
  spec.horizon = horizon;
  return make_instance(spec);
}

void BM_OptimalPolicy(benchmark::State& state) {
  const Instance inst = bench_instance(4, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(optimal_policy(inst.r_star, inst.pi_ref, 0.5));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(inst.support.cell_count()));
}
BENCHMARK(BM_OptimalPolicy)->DenseRange(2, 5);

void BM_SurrogateGradient(benchmark::State& state) {
  const Instance inst = bench_instance(4, static_cast<int>(state.range(0)));
  const auto demos = sample_demonstrations(inst, 1000, 1);
  for (auto _ : state) benchmark::DoNotOptimize(surrogate_gradient(inst.r_star, demos, inst.pi_ref, 0.5));
}
BENCHMARK(BM_SurrogateGradient)->DenseRange(2, 5);

void BM_Sample(benchmark::State& state) {
  const Instance inst = bench_instance(4, 4);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(inst.pi_ref.sample_indices(0, n, ++seed));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Sample)->Range(64, 65536);

void BM_IrlAlign(benchmark::State& state) {
  const Instance inst = bench_instance(4, 3);
  const auto demos = sample_demonstrations(inst, 200, 1);
  IrlConfig cfg = default_experiment_config().irl;
  cfg.iterations = 1;
  cfg.reward_steps_per_iter = static_cast<int>(state.range(0));
  const std::vector<double> zeros(inst.r_star.param_count(), 0.0);
  const RewardModel init = inst.r_star.with_params(zeros);
  for (auto _ : state) benchmark::DoNotOptimize(irl_align(demos, inst.pi_ref, init, cfg));
}
BENCHMARK(BM_IrlAlign)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
