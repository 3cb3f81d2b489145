// Serial reference vs OpenMP: grid sweep and trace pattern analysis.

#include <benchmark/benchmark.h>

#include <map>
#include <vector>

#include "moesim/config.hpp"
#include "moesim/sweep.hpp"
#include "moesim/trace.hpp"

using namespace moesim;

namespace {

const SystemConfig& mixtral() {
  static const SystemConfig c = preset("mixtral-8x7b");
  return c;
}

const RoutingTrace& trace(int tokens) {
  static std::map<int, RoutingTrace> cache;
  auto it = cache.find(tokens);
  if (it == cache.end()) it = cache.emplace(tokens, generate_trace(mixtral().model, {0.45, 0.0, 9, tokens})).first;
  return it->second;
}

std::vector<GridPoint> grid() {
  const int threads[] = {1, 2, 4, 8, 16, 24};
  const int ways[] = {1, 2, 4, 8};
  return make_grid(threads, ways);
}

void BM_SweepSerial(benchmark::State& state) {
  const auto& t = trace(static_cast<int>(state.range(0)));
  const auto g = grid();
  Strategy s;
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep_serial(t, mixtral(), s, g, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.size()));
}

void BM_SweepParallel(benchmark::State& state) {
  const auto& t = trace(static_cast<int>(state.range(0)));
  const auto g = grid();
  Strategy s;
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep(t, mixtral(), s, g, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.size()));
}

void BM_PatternsSerial(benchmark::State& state) {
  const auto& t = trace(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(analyze_patterns_serial(t));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t.record_count()));
}

void BM_PatternsParallel(benchmark::State& state) {
  const auto& t = trace(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(analyze_patterns(t));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t.record_count()));
}

}  // namespace

BENCHMARK(BM_SweepSerial)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SweepParallel)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PatternsSerial)->Arg(20000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PatternsParallel)->Arg(20000)->Arg(100000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
