#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/engine.hpp"
#include "moesim/model.hpp"

namespace moesim {

inline constexpr const char* kMetricsSchema = "moesim.metrics.v1";
inline constexpr int kDefaultWarmupTokens = 1;

// Steady-state tokens per second, excluding the first `warmup_tokens` tokens.
// Throws Error when no tokens remain after warmup.
double throughput(const SimResult& result, int warmup_tokens = kDefaultWarmupTokens);

struct EnergyReport {
  double p_cpu_watts = 0.0;
  double p_gpu_watts = 0.0;
  double tokens_per_second = 0.0;
  double joules_per_token = 0.0;  // (p_cpu + p_gpu) / tokens_per_second
};

EnergyReport energy_per_token(double tokens_per_second, const CostModel& costs, int threads);

struct HitRates {
  double at_least_one = 0.0;
  double all_k = 0.0;
};

struct HitRateReport {
  std::vector<HitRates> per_layer;
  HitRates covered_only;  // over layers that own a cache set
  HitRates all_layers;    // uncovered layers count as misses
  int covered_layers = 0;
};

HitRateReport hit_rate_report(const SimResult& result);

struct LabeledResult {
  std::string label;
  const SimResult* result = nullptr;
};

struct ComparisonRow {
  std::string label;
  double tokens_per_second = 0.0;
  double speedup = 0.0;  // vs the baseline label
  double joules_per_token = 0.0;
};

// Throws Error when the results were produced from different traces or
// models, or when `baseline` is not among the labels.
std::vector<ComparisonRow> compare_strategies(std::span<const LabeledResult> results, const std::string& baseline,
                                              const CostModel& costs, int warmup_tokens = kDefaultWarmupTokens);

// One CSV row per (strategy, threads, indexes, ways).
struct MetricsRow {
  std::string model;
  std::string strategy;
  std::string policy;
  std::string miss_execution;
  int threads = 0;
  int indexes = 0;
  int ways = 0;
  int covered_layers = 0;
  int tokens = 0;
  double tokens_per_second = 0.0;
  HitRates covered_only;
  HitRates all_layers;
  double joules_per_token = 0.0;

  std::string key() const;  // model/strategy/policy/miss/threads/ways identity
};

MetricsRow metrics_row(const SimResult& result, const CostModel& costs, int warmup_tokens = kDefaultWarmupTokens);
std::string csv_header();
std::string to_csv(const MetricsRow& row);
// Parses rows previously written by to_csv; lines that do not parse are skipped.
std::vector<MetricsRow> parse_csv(const std::string& text);

// Plot-ready series: throughput by (threads -> cache config) and hit rates by
// (cache config -> policy).
nlohmann::json series_json(std::span<const MetricsRow> rows);

nlohmann::json summary_json(const SimResult& result, const CostModel& costs,
                            int warmup_tokens = kDefaultWarmupTokens);

}  // namespace moesim
