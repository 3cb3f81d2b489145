#include "moesim/engine.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <queue>

#include "moesim/error.hpp"
#include "moesim/rng.hpp"

namespace moesim {

namespace {

std::string lower(const std::string& text) {
  std::string s;
  for (char c : text) s += c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// A set of identical transfer lanes. Each lane serves segments in the order
// they are reserved; a new segment goes to the lane that frees up first.
class Lanes {
 public:
  explicit Lanes(int count) : busy_until_(static_cast<std::size_t>(count), 0.0), busy_total_(busy_until_) {}

  struct Slot {
    int lane;
    double start;
    double end;
  };

  Slot reserve(double ready, double duration) {
    const auto it = std::min_element(busy_until_.begin(), busy_until_.end());
    const int lane = static_cast<int>(it - busy_until_.begin());
    const double start = std::max(ready, *it);
    *it = start + duration;
    busy_total_[lane] += duration;
    return {lane, start, *it};
  }

  const std::vector<double>& busy_total() const { return busy_total_; }

 private:
  std::vector<double> busy_until_;
  std::vector<double> busy_total_;
};

struct InFlight {
  double done;
  std::uint64_t seq;
  FetchTicket ticket;
  int token;
  int layer;

  bool operator>(const InFlight& o) const { return done != o.done ? done > o.done : seq > o.seq; }
};

class Simulator {
 public:
  Simulator(const RoutingTrace& trace, const ModelSpec& model, const HardwareSpec& hw, const CostModel& costs,
            const CacheGeometry& geometry, const Strategy& strategy, std::uint64_t seed,
            const SimOptions& options)
      : trace_(trace),
        costs_(costs),
        strategy_(strategy),
        options_(options),
        k_(model.top_k),
        t_cpu_(costs.cpu_layer_ms(strategy.threads)),
        weight_(strategy.kind == StrategyKind::PrefetchIdeal ? 1 : hw.weight_channel_count),
        act_(hw.activation_channel_count) {
    result_.info.model_name = model.name;
    result_.info.strategy = strategy;
    result_.info.geometry = strategy.uses_cache() ? geometry : CacheGeometry{};
    result_.info.seed = seed;
    result_.info.trace_fingerprint = trace.fingerprint();
    result_.info.tokens = trace.tokens();
    result_.info.num_layers = model.num_layers;
    result_.info.top_k = model.top_k;
    if (strategy.uses_cache()) {
      cache_.emplace(geometry, model, strategy.policy, derive_seed(seed, 0x6361636865ULL));  // "cache"
    }
  }

  SimResult run() {
    double now = 0.0;
    result_.token_timings.reserve(static_cast<std::size_t>(trace_.tokens()));
    for (int t = 0; t < trace_.tokens(); ++t) {
      TokenTiming tt;
      tt.token = t;
      tt.start_ms = now;
      if (options_.record_layers) tt.layers.reserve(static_cast<std::size_t>(trace_.num_layers()));
      for (int l = 0; l < trace_.num_layers(); ++l) {
        LayerTiming lt;
        const double end = run_layer(t, l, now, lt);
        lt.latency_ms = end - now;
        now = end;
        if (options_.record_layers) tt.layers.push_back(lt);
      }
      tt.end_ms = now;
      result_.token_timings.push_back(std::move(tt));
    }
    // Transfers still in flight land after the last token.
    apply_completions(std::numeric_limits<double>::infinity());

    if (cache_) {
      result_.cache_stats = cache_->stats();
    } else {
      result_.cache_stats.layers.resize(static_cast<std::size_t>(trace_.num_layers()));
      result_.cache_stats.experts_per_layer = trace_.experts_per_layer();
    }
    result_.channels.weight_busy_ms = weight_.busy_total();
    result_.channels.activation_busy_ms = act_.busy_total();
    std::stable_sort(result_.events.begin(), result_.events.end(),
                     [](const Event& a, const Event& b) { return a.time_ms < b.time_ms; });
    return std::move(result_);
  }

 private:
  void emit(Event e) {
    if (options_.record_events) result_.events.push_back(e);
  }

  void emit_simple(EventKind kind, int t, int l, double at, double duration, ExpertId expert = -1) {
    if (!options_.record_events) return;
    Event e;
    e.time_ms = at;
    e.kind = kind;
    e.token = t;
    e.layer = l;
    e.expert = expert;
    e.duration_ms = duration;
    result_.events.push_back(e);
  }

  // Runs the given experts back to back on the GPU from `from`.
  double gpu_experts(int t, int l, double from, std::span<const ExpertId> experts) {
    const double per = costs_.t_gpu_moe_layer_ms / k_;
    double at = from;
    for (ExpertId e : experts) {
      emit_simple(EventKind::GpuExpert, t, l, at, per, e);
      at += per;
    }
    return from + costs_.t_gpu_moe_layer_ms * (static_cast<double>(experts.size()) / k_);
  }

  // Activation round-trip then CPU compute of `experts`. Returns completion.
  double cpu_experts(int t, int l, double ready, std::span<const ExpertId> experts, LayerTiming& lt) {
    const auto act = act_.reserve(ready, costs_.t_act_roundtrip_ms);
    if (options_.record_events) {
      Event e;
      e.time_ms = act.start;
      e.kind = EventKind::ActXfer;
      e.token = t;
      e.layer = l;
      e.duration_ms = costs_.t_act_roundtrip_ms;
      e.lane = act.lane;
      e.issued_ms = ready;
      result_.events.push_back(e);
    }
    lt.stall_ms += act.start - ready;
    lt.act_ms += costs_.t_act_roundtrip_ms;
    const double per = t_cpu_ / k_;
    double at = act.end;
    for (ExpertId e : experts) {
      emit_simple(EventKind::CpuExpert, t, l, at, per, e);
      at += per;
    }
    const double cpu = t_cpu_ * (static_cast<double>(experts.size()) / k_);
    lt.cpu_ms += cpu;
    return act.end + cpu;
  }

  double attention(int t, int l, double now, LayerTiming& lt) {
    emit_simple(EventKind::LayerOther, t, l, now, costs_.t_other_layer_ms);
    lt.other_ms = costs_.t_other_layer_ms;
    return now + costs_.t_other_layer_ms;
  }

  Lanes::Slot weight_segment(int t, int l, ExpertId expert, double ready, double issued, std::uint64_t ticket,
                             int cache_layer) {
    const double duration = costs_.t_weight_moe_layer_ms / k_;
    const auto slot = weight_.reserve(ready, duration);
    ++result_.weight_transfers;
    if (options_.record_events) {
      Event s;
      s.kind = EventKind::WeightXferStart;
      s.time_ms = slot.start;
      s.token = t;
      s.layer = l;
      s.expert = expert;
      s.duration_ms = duration;
      s.lane = slot.lane;
      s.ticket = ticket;
      s.issued_ms = issued;
      s.cache_layer = cache_layer;
      Event d = s;
      d.kind = EventKind::WeightXferDone;
      d.time_ms = slot.end;
      d.duration_ms = 0.0;
      result_.events.push_back(s);
      result_.events.push_back(d);
    }
    return slot;
  }

  void apply_completions(double until) {
    while (!in_flight_.empty() && in_flight_.top().done <= until) {
      const InFlight f = in_flight_.top();
      in_flight_.pop();
      if (auto ev = cache_->complete_fetch(f.ticket)) {
        if (options_.record_events) {
          Event e;
          e.kind = EventKind::CacheEvict;
          e.time_ms = f.done;
          e.token = f.token;
          e.layer = f.layer;
          e.expert = ev->expert;
          e.cache_layer = ev->layer;
          e.ticket = f.ticket.generation;
          result_.events.push_back(e);
        }
      }
    }
  }

  double run_layer(int t, int l, double now, LayerTiming& lt) {
    auto experts = trace_.selection(t, l);
    switch (strategy_.kind) {
      case StrategyKind::CpuOnly: {
        const double ready = attention(t, l, now, lt);
        return cpu_experts(t, l, ready, experts, lt);
      }
      case StrategyKind::OnDemand: {
        const double ready = attention(t, l, now, lt);
        double loaded = ready;
        for (ExpertId e : experts) {
          loaded = std::max(loaded, weight_segment(t, l, e, ready, ready, ++transfer_seq_, -1).end);
        }
        lt.stall_ms += loaded - ready;
        lt.gpu_ms += costs_.t_gpu_moe_layer_ms;
        return gpu_experts(t, l, loaded, experts);
      }
      case StrategyKind::PrefetchIdeal: {
        // Weights for this layer were requested when the previous layer
        // started (one-layer lookahead) and stream over a single channel.
        const double requested = prefetch_issue_;
        prefetch_issue_ = now;
        double loaded = 0.0;
        for (ExpertId e : experts) {
          loaded = std::max(loaded, weight_segment(t, l, e, requested, requested, ++transfer_seq_, -1).end);
        }
        const double ready = attention(t, l, now, lt);
        const double start = std::max(ready, loaded);
        lt.stall_ms += start - ready;
        lt.gpu_ms += costs_.t_gpu_moe_layer_ms;
        return gpu_experts(t, l, start, experts);
      }
      case StrategyKind::Collaborative:
        return collaborative_layer(t, l, now, experts, lt);
    }
    throw SimulationError("unknown strategy");
  }

  double collaborative_layer(int t, int l, double now, std::span<const ExpertId> experts, LayerTiming& lt) {
    const double ready = attention(t, l, now, lt);
    apply_completions(ready);
    const LookupResult r = cache_->lookup(l, experts);

    if (!r.covered) return cpu_experts(t, l, ready, experts, lt);

    if (r.misses.empty()) {
      lt.gpu_ms += costs_.t_gpu_moe_layer_ms;
      return gpu_experts(t, l, ready, experts);
    }

    // Post-fetch every missed expert; the layer never waits on these.
    for (ExpertId e : r.misses) {
      if (auto ticket = cache_->request_fetch(l, e)) {
        const auto slot = weight_segment(t, l, e, ready, ready, ticket->generation, l);
        in_flight_.push({slot.end, ++transfer_seq_, *ticket, t, l});
      }
    }

    if (strategy_.miss_execution == MissExecution::WholeLayerCpu) {
      return cpu_experts(t, l, ready, experts, lt);
    }
    const double gpu_end = gpu_experts(t, l, ready, r.hits);
    lt.gpu_ms += gpu_end - ready;
    const double cpu_end = cpu_experts(t, l, ready, r.misses, lt);
    return std::max(gpu_end, cpu_end);
  }

  const RoutingTrace& trace_;
  const CostModel& costs_;
  Strategy strategy_;
  SimOptions options_;
  int k_;
  double t_cpu_;
  Lanes weight_;
  Lanes act_;
  std::optional<ExpertCache> cache_;
  std::priority_queue<InFlight, std::vector<InFlight>, std::greater<>> in_flight_;
  std::uint64_t transfer_seq_ = 0;
  double prefetch_issue_ = 0.0;
  SimResult result_;
};

}  // namespace

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Collaborative: return "collaborative";
    case StrategyKind::OnDemand: return "on-demand";
    case StrategyKind::PrefetchIdeal: return "prefetch-ideal";
    case StrategyKind::CpuOnly: return "cpu-only";
  }
  return "?";
}

std::string to_string(MissExecution mode) {
  return mode == MissExecution::Split ? "split" : "whole";
}

StrategyKind parse_strategy(const std::string& text) {
  const std::string s = lower(text);
  if (s == "collaborative") return StrategyKind::Collaborative;
  if (s == "on-demand" || s == "ondemand") return StrategyKind::OnDemand;
  if (s == "prefetch-ideal" || s == "prefetch") return StrategyKind::PrefetchIdeal;
  if (s == "cpu-only" || s == "cpu") return StrategyKind::CpuOnly;
  throw ConfigError("strategy", "unknown strategy '" + text + "'");
}

MissExecution parse_miss_execution(const std::string& text) {
  const std::string s = lower(text);
  if (s == "split") return MissExecution::Split;
  if (s == "whole" || s == "whole-layer-cpu") return MissExecution::WholeLayerCpu;
  throw ConfigError("miss_execution", "unknown miss execution mode '" + text + "'");
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::LayerOther: return "LAYER_OTHER";
    case EventKind::GpuExpert: return "GPU_EXPERT";
    case EventKind::CpuExpert: return "CPU_EXPERT";
    case EventKind::ActXfer: return "ACT_XFER";
    case EventKind::WeightXferStart: return "WEIGHT_XFER_START";
    case EventKind::WeightXferDone: return "WEIGHT_XFER_DONE";
    case EventKind::CacheEvict: return "CACHE_EVICT";
  }
  return "?";
}

nlohmann::ordered_json Event::to_json() const {
  nlohmann::ordered_json payload = nlohmann::ordered_json::object();
  if (expert >= 0) payload["expert"] = expert;
  if (duration_ms > 0.0) payload["duration_ms"] = duration_ms;
  if (lane >= 0) payload["lane"] = lane;
  switch (kind) {
    case EventKind::WeightXferStart:
    case EventKind::WeightXferDone:
      payload["ticket"] = ticket;
      payload["issued_ms"] = issued_ms;
      if (cache_layer >= 0) payload["cache_layer"] = cache_layer;
      break;
    case EventKind::ActXfer:
      payload["issued_ms"] = issued_ms;
      break;
    case EventKind::CacheEvict:
      payload["cache_layer"] = cache_layer;
      payload["ticket"] = ticket;
      break;
    default:
      break;
  }
  nlohmann::ordered_json j;
  j["time_ms"] = time_ms;
  j["kind"] = to_string(kind);
  j["token"] = token;
  j["layer"] = layer;
  j["payload"] = payload;
  return j;
}

nlohmann::json RunInfo::to_json() const {
  return {
      {"model", model_name},
      {"strategy", to_string(strategy.kind)},
      {"miss_execution", to_string(strategy.miss_execution)},
      {"policy", to_string(strategy.policy)},
      {"threads", strategy.threads},
      {"total_slots", geometry.total_slots},
      {"ways", geometry.ways},
      {"indexes", geometry.indexes},
      {"covered_layers", geometry.covered_layers},
      {"seed", seed},
      {"trace_fingerprint", trace_fingerprint},
      {"tokens", tokens},
      {"num_layers", num_layers},
      {"top_k", top_k},
  };
}

std::string SimResult::events_jsonl() const {
  std::string out;
  for (const auto& e : events) {
    out += e.to_json().dump();
    out += '\n';
  }
  return out;
}

SimResult simulate(const RoutingTrace& trace, const ModelSpec& model, const HardwareSpec& hw,
                   const CostModel& costs, const CacheGeometry& geometry, const Strategy& strategy,
                   std::uint64_t seed, const SimOptions& options) {
  model.validate();
  hw.validate();
  costs.validate();
  trace.check_matches(model);
  if (strategy.threads < 1) throw SimulationError("threads must be >= 1");
  costs.cpu_layer_ms(strategy.threads);
  if (strategy.uses_cache()) {
    if (geometry.covered_layers < 0 || geometry.covered_layers > model.num_layers) {
      throw SimulationError("cache geometry does not fit the model");
    }
    if (geometry.covered_layers > 0 && geometry.ways < 1) throw SimulationError("cache geometry has no ways");
  }
  return Simulator(trace, model, hw, costs, geometry, strategy, seed, options).run();
}

}  // namespace moesim
