#include "moesim/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "moesim/error.hpp"

namespace moesim {

double throughput(const SimResult& result, int warmup_tokens) {
  const auto& tt = result.token_timings;
  const int n = static_cast<int>(tt.size());
  if (warmup_tokens < 0) throw Error("warmup must be >= 0");
  if (n <= warmup_tokens) {
    throw Error("throughput needs more than " + std::to_string(warmup_tokens) + " tokens, result has " +
                std::to_string(n));
  }
  const double from = warmup_tokens == 0 ? tt.front().start_ms : tt[warmup_tokens - 1].end_ms;
  const double window_ms = tt.back().end_ms - from;
  return static_cast<double>(n - warmup_tokens) / (window_ms / 1000.0);
}

EnergyReport energy_per_token(double tokens_per_second, const CostModel& costs, int threads) {
  auto cpu = costs.p_cpu_watts.find(threads);
  auto gpu = costs.p_gpu_watts.find(threads);
  if (cpu == costs.p_cpu_watts.end()) {
    throw ConfigError("costs.p_cpu_watts." + std::to_string(threads), "no power entry for this thread count");
  }
  if (gpu == costs.p_gpu_watts.end()) {
    throw ConfigError("costs.p_gpu_watts." + std::to_string(threads), "no power entry for this thread count");
  }
  if (!(tokens_per_second > 0.0)) throw Error("throughput must be positive");
  EnergyReport r;
  r.p_cpu_watts = cpu->second;
  r.p_gpu_watts = gpu->second;
  r.tokens_per_second = tokens_per_second;
  r.joules_per_token = (r.p_cpu_watts + r.p_gpu_watts) / tokens_per_second;
  return r;
}

HitRateReport hit_rate_report(const SimResult& result) {
  const CacheStats& s = result.cache_stats;
  HitRateReport r;
  r.covered_layers = s.covered_layers;
  std::uint64_t cov_acc = 0, cov_any = 0, cov_all = 0;
  std::uint64_t acc = 0, any = 0, all = 0;
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const LayerStats& ls = s.layers[l];
    HitRates h;
    if (ls.accesses > 0) {
      h.at_least_one = static_cast<double>(ls.at_least_one_hit) / static_cast<double>(ls.accesses);
      h.all_k = static_cast<double>(ls.all_k_hit) / static_cast<double>(ls.accesses);
    }
    r.per_layer.push_back(h);
    acc += ls.accesses;
    any += ls.at_least_one_hit;
    all += ls.all_k_hit;
    if (static_cast<int>(l) < s.covered_layers) {
      cov_acc += ls.accesses;
      cov_any += ls.at_least_one_hit;
      cov_all += ls.all_k_hit;
    }
  }
  auto frac = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.covered_only = {frac(cov_any, cov_acc), frac(cov_all, cov_acc)};
  r.all_layers = {frac(any, acc), frac(all, acc)};
  return r;
}

std::vector<ComparisonRow> compare_strategies(std::span<const LabeledResult> results, const std::string& baseline,
                                              const CostModel& costs, int warmup_tokens) {
  if (results.empty()) throw Error("nothing to compare");
  const RunInfo& ref = results.front().result->info;
  double base_tps = -1.0;
  std::vector<ComparisonRow> rows;
  for (const auto& lr : results) {
    const RunInfo& info = lr.result->info;
    if (info.trace_fingerprint != ref.trace_fingerprint || info.tokens != ref.tokens) {
      throw Error("result '" + lr.label + "' was simulated on a different trace");
    }
    if (info.model_name != ref.model_name) throw Error("result '" + lr.label + "' uses a different model");
    ComparisonRow row;
    row.label = lr.label;
    row.tokens_per_second = throughput(*lr.result, warmup_tokens);
    row.joules_per_token = energy_per_token(row.tokens_per_second, costs, info.strategy.threads).joules_per_token;
    if (lr.label == baseline) base_tps = row.tokens_per_second;
    rows.push_back(row);
  }
  if (base_tps < 0.0) throw Error("baseline '" + baseline + "' not among the compared results");
  for (auto& row : rows) row.speedup = row.tokens_per_second / base_tps;
  return rows;
}

std::string MetricsRow::key() const {
  return model + "/" + strategy + "/" + policy + "/" + miss_execution + "/" + std::to_string(threads) + "/" +
         std::to_string(ways);
}

MetricsRow metrics_row(const SimResult& result, const CostModel& costs, int warmup_tokens) {
  const RunInfo& info = result.info;
  MetricsRow row;
  row.model = info.model_name;
  row.strategy = to_string(info.strategy.kind);
  row.policy = to_string(info.strategy.policy);
  row.miss_execution = to_string(info.strategy.miss_execution);
  row.threads = info.strategy.threads;
  row.indexes = info.geometry.indexes;
  row.ways = info.geometry.ways;
  row.covered_layers = info.geometry.covered_layers;
  row.tokens = info.tokens;
  row.tokens_per_second = throughput(result, warmup_tokens);
  const HitRateReport hits = hit_rate_report(result);
  row.covered_only = hits.covered_only;
  row.all_layers = hits.all_layers;
  try {
    row.joules_per_token = energy_per_token(row.tokens_per_second, costs, row.threads).joules_per_token;
  } catch (const ConfigError&) {
    row.joules_per_token = std::numeric_limits<double>::quiet_NaN();
  }
  return row;
}

std::string csv_header() {
  return "schema,model,strategy,policy,miss_execution,threads,indexes,ways,covered_layers,tokens,"
         "tokens_per_second,hit_any_covered,hit_all_covered,hit_any_all_layers,hit_all_all_layers,"
         "joules_per_token";
}

std::string to_csv(const MetricsRow& r) {
  char nums[256];
  std::snprintf(nums, sizeof nums, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.tokens_per_second, r.covered_only.at_least_one,
                r.covered_only.all_k, r.all_layers.at_least_one, r.all_layers.all_k, r.joules_per_token);
  std::ostringstream os;
  os << kMetricsSchema << ',' << r.model << ',' << r.strategy << ',' << r.policy << ',' << r.miss_execution << ','
     << r.threads << ',' << r.indexes << ',' << r.ways << ',' << r.covered_layers << ',' << r.tokens << ','
     << nums;
  return os.str();
}

std::vector<MetricsRow> parse_csv(const std::string& text) {
  std::vector<MetricsRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 16 || f[0] != kMetricsSchema) continue;
    try {
      MetricsRow r;
      r.model = f[1];
      r.strategy = f[2];
      r.policy = f[3];
      r.miss_execution = f[4];
      r.threads = std::stoi(f[5]);
      r.indexes = std::stoi(f[6]);
      r.ways = std::stoi(f[7]);
      r.covered_layers = std::stoi(f[8]);
      r.tokens = std::stoi(f[9]);
      r.tokens_per_second = std::stod(f[10]);
      r.covered_only = {std::stod(f[11]), std::stod(f[12])};
      r.all_layers = {std::stod(f[13]), std::stod(f[14])};
      r.joules_per_token = std::stod(f[15]);
      rows.push_back(r);
    } catch (const std::exception&) {
      // partially written line from an interrupted run
    }
  }
  return rows;
}

nlohmann::json series_json(std::span<const MetricsRow> rows) {
  nlohmann::json doc;
  doc["schema"] = kMetricsSchema;
  std::map<int, nlohmann::json> by_threads;
  std::map<std::pair<int, int>, nlohmann::json> by_config;
  for (const auto& r : rows) {
    by_threads[r.threads].push_back({{"strategy", r.strategy},
                                     {"policy", r.policy},
                                     {"indexes", r.indexes},
                                     {"ways", r.ways},
                                     {"tokens_per_second", r.tokens_per_second},
                                     {"joules_per_token", std::isnan(r.joules_per_token)
                                                              ? nlohmann::json(nullptr)
                                                              : nlohmann::json(r.joules_per_token)}});
    if (r.strategy == "collaborative") {
      by_config[{r.indexes, r.ways}].push_back({{"policy", r.policy},
                                                {"threads", r.threads},
                                                {"expert_hit", r.covered_only.at_least_one},
                                                {"all_experts_hit", r.covered_only.all_k}});
    }
  }
  doc["throughput_series"] = nlohmann::json::array();
  for (auto& [threads, points] : by_threads) {
    doc["throughput_series"].push_back({{"threads", threads}, {"points", points}});
  }
  doc["hit_rate_series"] = nlohmann::json::array();
  for (auto& [cfg, points] : by_config) {
    doc["hit_rate_series"].push_back({{"indexes", cfg.first}, {"ways", cfg.second}, {"points", points}});
  }
  return doc;
}

nlohmann::json summary_json(const SimResult& result, const CostModel& costs, int warmup_tokens) {
  nlohmann::json doc;
  doc["schema"] = kMetricsSchema;
  doc["run"] = result.info.to_json();
  const double tps = throughput(result, warmup_tokens);
  doc["warmup_tokens"] = warmup_tokens;
  doc["tokens_per_second"] = tps;
  double total = 0.0;
  for (const auto& t : result.token_timings) total += t.latency_ms();
  doc["mean_token_latency_ms"] = result.token_timings.empty() ? 0.0 : total / result.token_timings.size();
  doc["simulated_time_ms"] = result.token_timings.empty() ? 0.0 : result.token_timings.back().end_ms;
  try {
    const EnergyReport e = energy_per_token(tps, costs, result.info.strategy.threads);
    doc["energy"] = {{"p_cpu_watts", e.p_cpu_watts},
                     {"p_gpu_watts", e.p_gpu_watts},
                     {"joules_per_token", e.joules_per_token}};
  } catch (const ConfigError&) {
    doc["energy"] = nullptr;
  }
  const HitRateReport hits = hit_rate_report(result);
  nlohmann::json per_layer_any = nlohmann::json::array(), per_layer_all = nlohmann::json::array();
  for (const auto& h : hits.per_layer) {
    per_layer_any.push_back(h.at_least_one);
    per_layer_all.push_back(h.all_k);
  }
  doc["hit_rates"] = {
      {"covered_only", {{"at_least_one", hits.covered_only.at_least_one}, {"all_k", hits.covered_only.all_k}}},
      {"all_layers", {{"at_least_one", hits.all_layers.at_least_one}, {"all_k", hits.all_layers.all_k}}},
      {"per_layer_at_least_one", per_layer_any},
      {"per_layer_all_k", per_layer_all},
  };
  doc["cache_stats"] = result.cache_stats.to_json();
  doc["channels"] = {{"weight_busy_ms", result.channels.weight_busy_ms},
                     {"activation_busy_ms", result.channels.activation_busy_ms},
                     {"weight_transfers", result.weight_transfers}};
  return doc;
}

}  // namespace moesim
