// Acceptance runner: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "invariants.hpp"
#include "moesim/cache.hpp"
#include "moesim/config.hpp"
#include "moesim/engine.hpp"
#include "moesim/metrics.hpp"
#include "moesim/reference/oracles.hpp"
#include "moesim/rng.hpp"
#include "moesim/sweep.hpp"

using namespace moesim;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Strategy strategy(StrategyKind kind, int threads = 24) {
  Strategy s;
  s.kind = kind;
  s.threads = threads;
  return s;
}

SimResult run(const SystemConfig& c, const RoutingTrace& trace, const Strategy& s, int ways, std::uint64_t seed = 1) {
  SimOptions o;
  o.record_layers = false;
  return simulate(trace, c.model, c.hardware, c.costs, derive_cache_geometry(c.model, c.hardware, ways), s, seed, o);
}

// Reuse-heavy synthetic traces used by the throughput criteria.
constexpr double kReuse = 0.45;
constexpr int kTokens = 2000;
constexpr std::uint64_t kTraceSeeds[] = {101, 202, 303};
const std::vector<int> kWays = {1, 2, 3, 4, 6, 8};

Verdict geometry() {
  const SystemConfig c = preset("mixtral-8x7b");
  const CacheGeometry g = derive_cache_geometry(c.model, c.hardware, 4);
  return {g.total_slots == 56 && g.indexes == 14, fmt("S=%d N=%d (want 56, 14)", g.total_slots, g.indexes)};
}

Verdict random_policy() {
  Verdict v;
  for (auto [n, m] : {std::pair{8, 2}, std::pair{8, 4}, std::pair{16, 4}, std::pair{16, 8}}) {
    const RandomPolicyRates exact = random_policy_hit_rates(n, m);
    const reference::RatePair brute = reference::enumerate_random_policy(n, m);
    const bool closed_ok = exact.at_least_one.num * brute.den == brute.at_least_one_num * exact.at_least_one.den &&
                           exact.both.num * brute.den == brute.both_num * exact.both.den;

    const ModelSpec one{"probe", 1, n, 2, 1, 0};
    ExpertCache cache({m, m, 1, 1}, one, EvictionPolicy::RandomStatic, derive_seed(7, n, m));
    Rng rng(derive_seed(8, n, m));
    constexpr int kAccesses = 100000;
    for (int i = 0; i < kAccesses; ++i) {
      const ExpertId a = static_cast<ExpertId>(rng.below(n));
      ExpertId b;
      do b = static_cast<ExpertId>(rng.below(n));
      while (b == a);
      const ExpertId req[2] = {a, b};
      cache.lookup(0, req);
    }
    const double sim = double(cache.stats().layers[0].at_least_one_hit) / kAccesses;
    const double delta = std::abs(sim - exact.at_least_one.value());
    v.pass = v.pass && closed_ok && delta <= 0.01;
    v.detail += fmt("(%d,%d) sim=%.4f exact=%lld/%lld |d|=%.4f enum=%s; ", n, m, sim,
                    (long long)exact.at_least_one.num, (long long)exact.at_least_one.den, delta,
                    closed_ok ? "ok" : "MISMATCH");
  }
  return v;
}

Verdict replay() {
  Rng rng(2718);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const int n = 2 + static_cast<int>(rng.below(7));
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(n, 3))));
    const int ways = 1 + static_cast<int>(rng.below(4));
    const ModelSpec m{"replay", 1 + static_cast<int>(rng.below(4)), n, k, 1, 0};
    const RoutingTrace trace = generate_trace(m, {rng.uniform(), rng.uniform() * 0.5, rng.next(),
                                                  1 + static_cast<int>(rng.below(1000))});
    const int covered = static_cast<int>(rng.below(static_cast<std::uint64_t>(m.num_layers) + 1));
    for (auto [policy, ref] : {std::pair{EvictionPolicy::Lru, reference::Replacement::Lru},
                               std::pair{EvictionPolicy::Fifo, reference::Replacement::Fifo}}) {
      ExpertCache cache({covered * ways, ways, covered, covered}, m, policy);
      for (int t = 0; t < trace.tokens(); ++t) {
        for (int l = 0; l < m.num_layers; ++l) {
          const LookupResult r = cache.lookup(l, trace.selection(t, l));
          if (!r.covered) continue;
          for (ExpertId e : r.misses) {
            if (auto ticket = cache.request_fetch(l, e)) cache.complete_fetch(*ticket);
          }
        }
      }
      reference::ReplayCounts got;
      for (const LayerStats& s : cache.stats().layers) {
        got.accesses += s.accesses;
        got.expert_hits += s.expert_hits;
        got.at_least_one += s.at_least_one_hit;
        got.all_k += s.all_k_hit;
      }
      got.evictions = cache.stats().evictions;
      const reference::ReplayCounts want = reference::replay_reference(trace, covered, ways, ref);
      mismatches += !(got == want);
    }
  }
  return {mismatches == 0, fmt("100 traces x {LRU, FIFO}: %d mismatching replays", mismatches)};
}

Verdict degeneracy() {
  int traces = 0, tokens = 0, differing = 0;
  for (const auto& name : preset_names()) {
    SystemConfig c = preset(name);
    c.hardware.gpu_memory_bytes = c.model.resident_bytes;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const RoutingTrace trace = generate_trace(c.model, {0.45, 0.2 * double(seed), seed, 200});
      for (int threads : {1, 24}) {
        for (auto mode : {MissExecution::Split, MissExecution::WholeLayerCpu}) {
          Strategy s = strategy(StrategyKind::Collaborative, threads);
          s.miss_execution = mode;
          const SimResult a = run(c, trace, s, 4);
          const SimResult b = run(c, trace, strategy(StrategyKind::CpuOnly, threads), 4);
          ++traces;
          for (std::size_t t = 0; t < a.token_timings.size(); ++t) {
            ++tokens;
            differing += a.token_timings[t].start_ms != b.token_timings[t].start_ms ||
                         a.token_timings[t].end_ms != b.token_timings[t].end_ms;
          }
        }
      }
    }
  }
  return {differing == 0, fmt("%d runs, %d tokens, %d with different timing", traces, tokens, differing)};
}

Verdict baselines() {
  SystemConfig zero = preset("mixtral-8x7b");
  zero.costs.t_other_layer_ms = 0.0;
  const RoutingTrace short_trace = generate_trace(zero.model, {kReuse, 0.0, 1, 50});
  const double cpu_ms = run(zero, short_trace, strategy(StrategyKind::CpuOnly), 4).token_timings.back().latency_ms();
  const double od_ms = run(zero, short_trace, strategy(StrategyKind::OnDemand), 4).token_timings.back().latency_ms();
  const double cpu_want = 32 * (7.34 + 0.11), od_want = 32 * (28.02 + 0.25);
  const bool closed = std::abs(cpu_ms - cpu_want) <= 0.001 * cpu_want && std::abs(od_ms - od_want) <= 0.001 * od_want;

  // Cache gains on the calibrated preset: best cache shape at 24 threads.
  const SystemConfig c = preset("mixtral-8x7b");
  double best = 0.0;
  int best_ways = 0;
  double od_sum = 0.0, collab_best_sum = 0.0;
  std::vector<double> per_ways(kWays.size(), 0.0);
  for (std::uint64_t seed : kTraceSeeds) {
    const RoutingTrace trace = generate_trace(c.model, {kReuse, 0.0, seed, kTokens});
    od_sum += throughput(run(c, trace, strategy(StrategyKind::OnDemand), 4));
    for (std::size_t i = 0; i < kWays.size(); ++i) {
      per_ways[i] += throughput(run(c, trace, strategy(StrategyKind::Collaborative), kWays[i]));
    }
  }
  for (std::size_t i = 0; i < kWays.size(); ++i) {
    if (per_ways[i] > collab_best_sum) {
      collab_best_sum = per_ways[i];
      best_ways = kWays[i];
    }
  }
  best = collab_best_sum / od_sum;
  const bool gains = best >= 4.0 && std::abs(best - 4.4) <= 0.15 * 4.4;
  return {closed && gains,
          fmt("t_other=0: CPU_ONLY %.3f ms/token (want %.1f), ON_DEMAND %.3f ms/token (want %.1f), ratio %.2fx; "
              "calibrated t_other=%.2f ms, p_token_reuse=%.2f: best COLLABORATIVE/ON_DEMAND = %.2fx at %d ways "
              "(want >= 4.0 and within 4.4 +- 15%%)",
              cpu_ms, cpu_want, od_ms, od_want, od_ms / cpu_ms, c.costs.t_other_layer_ms, kReuse, best, best_ways)};
}

Verdict uplift() {
  const SystemConfig c = preset("mixtral-8x7b");
  std::vector<RoutingTrace> traces;
  for (std::uint64_t seed : kTraceSeeds) traces.push_back(generate_trace(c.model, {kReuse, 0.0, seed, kTokens}));
  Verdict v;
  for (int threads : {8, 16, 24}) {
    double cpu = 0.0;
    for (const auto& t : traces) cpu += throughput(run(c, t, strategy(StrategyKind::CpuOnly, threads), 4));
    std::string in_band;
    double lo = 1e9, hi = -1e9;
    for (int ways : kWays) {
      double collab = 0.0;
      for (const auto& t : traces) collab += throughput(run(c, t, strategy(StrategyKind::Collaborative, threads), ways));
      const double gain = collab / cpu - 1.0;
      lo = std::min(lo, gain);
      hi = std::max(hi, gain);
      if (gain >= 0.15 && gain <= 0.35) in_band += fmt("%s%d", in_band.empty() ? "" : ",", ways);
    }
    v.pass = v.pass && !in_band.empty();
    v.detail += fmt("threads=%d: uplift %.0f%%..%.0f%%, in band at ways {%s}; ", threads, lo * 100, hi * 100,
                    in_band.c_str());
  }
  return v;
}

Verdict energy() {
  const double mix = energy_per_token(4.8, preset("mixtral-8x7b").costs, 24).joules_per_token;
  const double phi = energy_per_token(10.39, preset("phi3.5-moe").costs, 24).joules_per_token;
  const bool ok = std::abs(mix - 51.1) <= 0.01 * 51.1 && std::abs(phi - 21.9) <= 0.01 * 21.9;
  return {ok, fmt("mixtral %.2f J/token (want 51.1), phi3.5 %.2f J/token (want 21.9)", mix, phi)};
}

Verdict sweep_trend() {
  const SystemConfig c = preset("mixtral-8x7b");
  const int threads[] = {1, 24};
  const int ways[] = {2, 4, 8};
  const auto grid = make_grid(threads, ways);
  std::vector<double> sum(grid.size(), 0.0);
  for (std::uint64_t seed : kTraceSeeds) {
    const RoutingTrace trace = generate_trace(c.model, {kReuse, 0.0, seed, kTokens});
    const auto points = run_sweep(trace, c, strategy(StrategyKind::Collaborative), grid, seed);
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!points[i].result) return {false, "sweep point failed: " + points[i].error};
      sum[i] += throughput(*points[i].result);
    }
  }
  auto best_ways = [&](int t) {
    int w = 0;
    double best = -1.0;
    std::string all;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i].threads != t) continue;
      all += fmt(" %d:%.3f", grid[i].ways, sum[i] / std::size(kTraceSeeds));
      if (sum[i] > best) {
        best = sum[i];
        w = grid[i].ways;
      }
    }
    return std::pair{w, all};
  };
  const auto [w1, s1] = best_ways(1);
  const auto [w24, s24] = best_ways(24);
  return {w1 <= w24, fmt("best ways at 1 thread = %d (%s tok/s), at 24 threads = %d (%s tok/s)", w1, s1.c_str() + 1,
                         w24, s24.c_str() + 1)};
}

Verdict invariants() {
  Rng rng(31337);
  int failing = 0, nondeterministic = 0;
  std::string first;
  for (int i = 0; i < 1000; ++i) {
    const auto pc = testing::random_case(rng);
    SimOptions o;
    o.record_events = true;
    const SimResult a = simulate(pc.trace, pc.model, pc.hw, pc.costs, pc.geometry, pc.strategy, pc.seed, o);
    const auto bad = testing::check_event_log(a, pc.trace);
    if (!bad.empty()) {
      ++failing;
      if (first.empty()) first = pc.describe() + ": " + bad.front();
    }
    const SimResult b = simulate(pc.trace, pc.model, pc.hw, pc.costs, pc.geometry, pc.strategy, pc.seed, o);
    nondeterministic += a.events_jsonl() != b.events_jsonl();
  }
  return {failing == 0 && nondeterministic == 0,
          fmt("1000 cases: %d violate conservation/channel/causality, %d not byte-identical%s%s", failing,
              nondeterministic, first.empty() ? "" : "; first: ", first.c_str())};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Verdict()> check;
  };
  const Criterion criteria[] = {
      {"1 cache geometry", geometry},
      {"2 random-policy oracle", random_policy},
      {"3 cache replay equivalence", replay},
      {"4 no-cache degeneracy", degeneracy},
      {"5 baseline closed forms and speedup", baselines},
      {"6 CPU-only uplift band", uplift},
      {"7 energy identity", energy},
      {"8 sweep trend", sweep_trend},
      {"9 invariant suite", invariants},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s: %s [%.2fs]\n", v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", int(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
