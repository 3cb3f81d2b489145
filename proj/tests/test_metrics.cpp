#include <doctest.h>

#include <cmath>
#include <limits>

#include "moesim/config.hpp"
#include "moesim/engine.hpp"
#include "moesim/error.hpp"
#include "moesim/metrics.hpp"

using namespace moesim;

namespace {

SimResult uniform_tokens(int n, double ms) {
  SimResult r;
  for (int i = 0; i < n; ++i) r.token_timings.push_back({i, i * ms, (i + 1) * ms, {}});
  r.info.tokens = n;
  return r;
}

Strategy make(StrategyKind kind, int threads = 24, EvictionPolicy policy = EvictionPolicy::Lru) {
  Strategy s;
  s.kind = kind;
  s.threads = threads;
  s.policy = policy;
  return s;
}

SimResult run(const SystemConfig& c, const RoutingTrace& trace, const Strategy& s, int ways = 4) {
  return simulate(trace, c.model, c.hardware, c.costs, derive_cache_geometry(c.model, c.hardware, ways), s, 1);
}

}  // namespace

TEST_CASE("throughput of uniform tokens") {
  const SimResult r = uniform_tokens(10, 100.0);
  CHECK(throughput(r, 0) == doctest::Approx(10.0));
  CHECK(throughput(r, 1) == doctest::Approx(10.0));
  CHECK(throughput(r, 9) == doctest::Approx(10.0));
  CHECK_THROWS_AS(throughput(r, 10), Error);
  CHECK_THROWS_AS(throughput(r, -1), Error);
}

TEST_CASE("warmup excludes the cold first token") {
  SimResult r = uniform_tokens(5, 100.0);
  // Token 0 takes 500 ms instead.
  for (auto& tt : r.token_timings) {
    if (tt.token > 0) tt.start_ms += 400.0;
    tt.end_ms += 400.0;
  }
  CHECK(throughput(r, 0) == doctest::Approx(5.0 / 0.9));
  CHECK(throughput(r, 1) == doctest::Approx(10.0));
}

TEST_CASE("CPU-only throughput from the closed form") {
  SystemConfig c = preset("mixtral-8x7b");
  c.costs.t_other_layer_ms = 0.0;
  const RoutingTrace trace = generate_trace(c.model, {0.45, 0.0, 1, 10});
  CHECK(throughput(run(c, trace, make(StrategyKind::CpuOnly))) == doctest::Approx(4.19).epsilon(0.001));
}

TEST_CASE("energy per token") {
  const SystemConfig mix = preset("mixtral-8x7b");
  const SystemConfig phi = preset("phi3.5-moe");
  CHECK(energy_per_token(4.8, mix.costs, 24).joules_per_token == doctest::Approx(51.1).epsilon(0.01));
  CHECK(energy_per_token(10.39, phi.costs, 24).joules_per_token == doctest::Approx(21.9).epsilon(0.01));
  CHECK(energy_per_token(1e12, mix.costs, 24).joules_per_token < 1e-9);
  CHECK_THROWS_AS(energy_per_token(4.8, mix.costs, 3), ConfigError);
  CHECK_THROWS_AS(energy_per_token(0.0, mix.costs, 24), Error);

  // Rearranged: J/token * tokens/s = total watts.
  for (int threads : mix.hardware.cpu_thread_options) {
    for (double tps : {0.5, 1.0, 3.3, 7.0}) {
      const EnergyReport e = energy_per_token(tps, mix.costs, threads);
      CHECK(e.joules_per_token * e.tokens_per_second == doctest::Approx(e.p_cpu_watts + e.p_gpu_watts));
    }
  }
}

TEST_CASE("hit rates") {
  const SystemConfig c = preset("mixtral-8x7b");
  const RoutingTrace trace = generate_trace(c.model, {0.45, 0.0, 3, 200});

  SUBCASE("every expert resident on covered layers") {
    SystemConfig big = c;
    big.hardware.gpu_memory_bytes = 256 * kGiB;
    const CacheGeometry g = derive_cache_geometry(big.model, big.hardware, 8);
    REQUIRE(g.covered_layers == 32);
    const SimResult r = simulate(trace, big.model, big.hardware, big.costs, g,
                                 make(StrategyKind::Collaborative, 24, EvictionPolicy::RandomStatic), 1);
    const HitRateReport h = hit_rate_report(r);
    CHECK(h.covered_only.at_least_one == 1.0);
    CHECK(h.covered_only.all_k == 1.0);
    CHECK(h.all_layers.all_k == 1.0);
  }
  SUBCASE("no cache") {
    SystemConfig none = c;
    none.hardware.gpu_memory_bytes = none.model.resident_bytes;
    const HitRateReport h = hit_rate_report(run(none, trace, make(StrategyKind::Collaborative)));
    CHECK(h.covered_layers == 0);
    CHECK(h.covered_only.at_least_one == 0.0);
    CHECK(h.all_layers.at_least_one == 0.0);
    CHECK(h.all_layers.all_k == 0.0);
  }
  SUBCASE("static placement on uniform routing") {
    const RoutingTrace uniform = generate_trace(c.model, {0.0, 0.0, 8, 3200});
    const SimResult r = run(c, uniform, make(StrategyKind::Collaborative, 24, EvictionPolicy::RandomStatic));
    const HitRateReport h = hit_rate_report(r);
    const RandomPolicyRates exact = random_policy_hit_rates(8, 4);
    CHECK(std::abs(h.covered_only.at_least_one - exact.at_least_one.value()) <= 0.01);
    CHECK(std::abs(h.covered_only.all_k - exact.both.value()) <= 0.01);
  }
  SUBCASE("covered-only dominates all-layers when layers are uncovered") {
    for (int ways : {1, 2, 4, 8}) {
      const HitRateReport h = hit_rate_report(run(c, trace, make(StrategyKind::Collaborative), ways));
      if (h.covered_layers < 32) {
        CHECK(h.covered_only.at_least_one >= h.all_layers.at_least_one);
        CHECK(h.covered_only.all_k >= h.all_layers.all_k);
      }
    }
  }
}

TEST_CASE("strategy comparison") {
  const SystemConfig c = preset("mixtral-8x7b");
  const RoutingTrace trace = generate_trace(c.model, {0.45, 0.0, 5, 120});
  const SimResult collab = run(c, trace, make(StrategyKind::Collaborative));
  const SimResult on_demand = run(c, trace, make(StrategyKind::OnDemand));
  const SimResult cpu = run(c, trace, make(StrategyKind::CpuOnly));

  const LabeledResult rs[] = {{"collab", &collab}, {"on-demand", &on_demand}, {"cpu", &cpu}};
  const auto rows = compare_strategies(rs, "on-demand", c.costs);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].speedup == 1.0);
  CHECK(rows[0].speedup >= 3.5);
  CHECK(rows[0].speedup == doctest::Approx(rows[0].tokens_per_second / rows[1].tokens_per_second));
  CHECK(rows[0].joules_per_token == doctest::Approx(245.4 / rows[0].tokens_per_second));

  const LabeledResult self[] = {{"a", &collab}, {"b", &collab}};
  CHECK(compare_strategies(self, "a", c.costs)[1].speedup == 1.0);

  CHECK_THROWS_AS(compare_strategies(rs, "prefetch", c.costs), Error);
  const RoutingTrace other = generate_trace(c.model, {0.45, 0.0, 6, 120});
  const SimResult elsewhere = run(c, other, make(StrategyKind::CpuOnly));
  const LabeledResult mixed[] = {{"collab", &collab}, {"cpu", &elsewhere}};
  CHECK_THROWS_AS(compare_strategies(mixed, "cpu", c.costs), Error);
}

TEST_CASE("speedups do not depend on the time unit") {
  const SystemConfig c = preset("mixtral-8x7b");
  const RoutingTrace trace = generate_trace(c.model, {0.45, 0.0, 5, 80});
  auto speedups = [&](double scale) {
    SystemConfig s = c;
    s.costs.t_gpu_moe_layer_ms *= scale;
    s.costs.t_act_roundtrip_ms *= scale;
    s.costs.t_weight_moe_layer_ms *= scale;
    s.costs.t_other_layer_ms *= scale;
    for (auto& [t, ms] : s.costs.t_cpu_moe_layer_ms) ms *= scale;
    const SimResult a = run(s, trace, make(StrategyKind::Collaborative));
    const SimResult b = run(s, trace, make(StrategyKind::OnDemand));
    const SimResult d = run(s, trace, make(StrategyKind::PrefetchIdeal));
    const LabeledResult rs[] = {{"a", &a}, {"b", &b}, {"d", &d}};
    return compare_strategies(rs, "b", s.costs);
  };
  const auto base = speedups(1.0);
  for (double scale : {0.001, 0.5, 4.0, 1000.0}) {
    const auto scaled = speedups(scale);
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(scaled[i].speedup == doctest::Approx(base[i].speedup).epsilon(1e-9));
    }
  }
}

TEST_CASE("CSV rows round-trip and resume keys") {
  const SystemConfig c = preset("mixtral-8x7b");
  const RoutingTrace trace = generate_trace(c.model, {0.45, 0.0, 5, 20});
  const MetricsRow row = metrics_row(run(c, trace, make(StrategyKind::Collaborative, 8), 2), c.costs);
  CHECK(row.indexes == 28);
  CHECK(row.ways == 2);
  CHECK(row.covered_layers == 28);
  const std::string text = csv_header() + "\n" + to_csv(row) + "\n" + "moesim.metrics.v1,broken\n";
  const auto parsed = parse_csv(text);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].key() == row.key());
  CHECK(parsed[0].tokens_per_second == doctest::Approx(row.tokens_per_second).epsilon(1e-8));
  CHECK(parsed[0].covered_only.at_least_one == doctest::Approx(row.covered_only.at_least_one).epsilon(1e-8));

  // No power entry: J/token is not a number but the row is still written.
  CostModel no_power = c.costs;
  no_power.p_cpu_watts.erase(8);
  CHECK(std::isnan(metrics_row(run(c, trace, make(StrategyKind::Collaborative, 8), 2), no_power).joules_per_token));
}

TEST_CASE("plot series and summary") {
  const SystemConfig c = preset("mixtral-8x7b");
  const RoutingTrace trace = generate_trace(c.model, {0.45, 0.0, 5, 20});
  std::vector<MetricsRow> rows;
  for (int threads : {8, 24}) {
    for (int ways : {2, 4}) rows.push_back(metrics_row(run(c, trace, make(StrategyKind::Collaborative, threads), ways), c.costs));
  }
  const auto doc = series_json(rows);
  CHECK(doc["throughput_series"].size() == 2);
  CHECK(doc["hit_rate_series"].size() == 2);

  const SimResult r = run(c, trace, make(StrategyKind::Collaborative));
  const auto s = summary_json(r, c.costs);
  CHECK(s["tokens_per_second"].get<double>() == doctest::Approx(throughput(r)));
  CHECK(s.contains("hit_rates"));
}
