#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/cache.hpp"
#include "moesim/model.hpp"
#include "moesim/trace.hpp"

namespace moesim {

enum class StrategyKind { Collaborative, OnDemand, PrefetchIdeal, CpuOnly };
// How a covered layer with at least one miss executes.
enum class MissExecution { Split, WholeLayerCpu };

std::string to_string(StrategyKind kind);
std::string to_string(MissExecution mode);
StrategyKind parse_strategy(const std::string& text);
MissExecution parse_miss_execution(const std::string& text);

struct Strategy {
  StrategyKind kind = StrategyKind::Collaborative;
  MissExecution miss_execution = MissExecution::Split;
  EvictionPolicy policy = EvictionPolicy::Lru;
  int threads = 24;

  bool uses_cache() const { return kind == StrategyKind::Collaborative; }
};

enum class EventKind { LayerOther, GpuExpert, CpuExpert, ActXfer, WeightXferStart, WeightXferDone, CacheEvict };
std::string to_string(EventKind kind);

// One timeline entry. `time_ms` is the start of the activity; `duration_ms`
// is zero for instantaneous events (transfer completion, eviction).
struct Event {
  double time_ms = 0.0;
  EventKind kind = EventKind::LayerOther;
  int token = -1;  // token/layer that caused the activity
  int layer = -1;
  ExpertId expert = -1;
  double duration_ms = 0.0;
  int lane = -1;                // channel lane for transfers
  std::uint64_t ticket = 0;     // weight transfers: fetch generation / sequence
  double issued_ms = 0.0;       // weight transfers: when the request was made
  int cache_layer = -1;         // CacheEvict / WeightXferDone: cache set touched

  nlohmann::ordered_json to_json() const;
};

struct LayerTiming {
  double other_ms = 0.0;
  double gpu_ms = 0.0;
  double cpu_ms = 0.0;
  double act_ms = 0.0;
  double stall_ms = 0.0;  // waiting on a channel or on weights
  double latency_ms = 0.0;
};

struct TokenTiming {
  int token = 0;
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::vector<LayerTiming> layers;  // empty unless recorded

  double latency_ms() const { return end_ms - start_ms; }
};

struct ChannelUsage {
  std::vector<double> weight_busy_ms;      // per lane
  std::vector<double> activation_busy_ms;  // per lane
};

struct SimOptions {
  bool record_events = false;
  bool record_layers = true;
};

// Echo of everything that determined a run.
struct RunInfo {
  std::string model_name;
  Strategy strategy;
  CacheGeometry geometry;
  std::uint64_t seed = 0;
  std::uint64_t trace_fingerprint = 0;
  int tokens = 0;
  int num_layers = 0;
  int top_k = 0;

  nlohmann::json to_json() const;
};

struct SimResult {
  RunInfo info;
  std::vector<TokenTiming> token_timings;
  CacheStats cache_stats;
  ChannelUsage channels;
  std::vector<Event> events;  // ordered by (time, emission order)
  std::uint64_t weight_transfers = 0;

  // JSONL, one event per line.
  std::string events_jsonl() const;
};

// Runs the trace under `strategy`. Deterministic for fixed inputs.
// Throws SimulationError / ConfigError / TraceError on invalid inputs.
SimResult simulate(const RoutingTrace& trace, const ModelSpec& model, const HardwareSpec& hw,
                   const CostModel& costs, const CacheGeometry& geometry, const Strategy& strategy,
                   std::uint64_t seed, const SimOptions& options = {});

}  // namespace moesim
