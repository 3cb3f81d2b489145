#include "moesim/sweep.hpp"

#include <omp.h>

#include "moesim/error.hpp"
#include "moesim/rng.hpp"

namespace moesim {

namespace {

SweepPoint run_point(const RoutingTrace& trace, const SystemConfig& config, const Strategy& base,
                     const GridPoint& point, std::uint64_t seed) {
  SweepPoint out;
  out.point = point;
  try {
    Strategy strategy = base;
    strategy.threads = point.threads;
    out.geometry = derive_cache_geometry(config.model, config.hardware, point.ways);
    SimOptions options;
    options.record_events = false;
    options.record_layers = false;
    out.result = simulate(trace, config.model, config.hardware, config.costs, out.geometry, strategy,
                          sweep_point_seed(seed, point), options);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace

std::vector<GridPoint> make_grid(std::span<const int> threads, std::span<const int> ways) {
  std::vector<GridPoint> grid;
  for (int t : threads) {
    for (int w : ways) grid.push_back({t, w});
  }
  return grid;
}

std::uint64_t sweep_point_seed(std::uint64_t seed, const GridPoint& point) {
  return derive_seed(seed, static_cast<std::uint64_t>(point.threads), static_cast<std::uint64_t>(point.ways));
}

std::vector<SweepPoint> run_sweep(const RoutingTrace& trace, const SystemConfig& config, const Strategy& base,
                                  std::span<const GridPoint> grid, std::uint64_t seed, int jobs) {
  std::vector<SweepPoint> out(grid.size());
  const int n = static_cast<int>(grid.size());
  const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (int i = 0; i < n; ++i) {
    out[i] = run_point(trace, config, base, grid[i], seed);
  }
  return out;
}

std::vector<SweepPoint> run_sweep_serial(const RoutingTrace& trace, const SystemConfig& config,
                                         const Strategy& base, std::span<const GridPoint> grid,
                                         std::uint64_t seed) {
  std::vector<SweepPoint> out;
  out.reserve(grid.size());
  for (const auto& p : grid) out.push_back(run_point(trace, config, base, p, seed));
  return out;
}

}  // namespace moesim
