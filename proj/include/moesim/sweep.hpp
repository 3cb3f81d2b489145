#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moesim/engine.hpp"
#include "moesim/model.hpp"
#include "moesim/trace.hpp"

namespace moesim {

struct GridPoint {
  int threads = 1;
  int ways = 1;
  bool operator==(const GridPoint&) const = default;
};

// One grid point's outcome; exactly one of `result` / `error` is set.
struct SweepPoint {
  GridPoint point;
  CacheGeometry geometry;
  std::optional<SimResult> result;
  std::string error;
};

std::vector<GridPoint> make_grid(std::span<const int> threads, std::span<const int> ways);

// Each point gets its own seed derived from (seed, threads, ways), so any
// point can be reproduced in isolation.
std::uint64_t sweep_point_seed(std::uint64_t seed, const GridPoint& point);

// Simulates every grid point over the same trace. Points run in parallel
// (OpenMP, at most `jobs` threads, 0 = runtime default); an error at one
// point is captured in its SweepPoint without aborting the rest.
std::vector<SweepPoint> run_sweep(const RoutingTrace& trace, const SystemConfig& config, const Strategy& base,
                                  std::span<const GridPoint> grid, std::uint64_t seed, int jobs = 0);

// Same contract, one point after another. Reference for run_sweep.
std::vector<SweepPoint> run_sweep_serial(const RoutingTrace& trace, const SystemConfig& config,
                                         const Strategy& base, std::span<const GridPoint> grid,
                                         std::uint64_t seed);

}  // namespace moesim
