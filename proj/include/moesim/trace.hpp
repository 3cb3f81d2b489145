#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moesim/model.hpp"

namespace moesim {

using ExpertId = std::int32_t;

// One router decision as it appears in a trace file.
struct RoutingRecord {
  int token = 0;
  int layer = 0;
  std::vector<ExpertId> experts;
};

// Complete decode-phase routing for `tokens` x `num_layers`, stored flat in
// token-major, then layer order with `top_k` expert ids per record.
class RoutingTrace {
 public:
  RoutingTrace() = default;
  RoutingTrace(std::string model_name, int num_layers, int experts_per_layer, int top_k, int tokens);

  const std::string& model_name() const { return model_name_; }
  int num_layers() const { return num_layers_; }
  int experts_per_layer() const { return experts_per_layer_; }
  int top_k() const { return top_k_; }
  int tokens() const { return tokens_; }
  std::size_t record_count() const { return static_cast<std::size_t>(tokens_) * num_layers_; }

  std::span<const ExpertId> selection(int token, int layer) const {
    return {experts_.data() + offset(token, layer), static_cast<std::size_t>(top_k_)};
  }
  std::span<ExpertId> selection(int token, int layer) {
    return {experts_.data() + offset(token, layer), static_cast<std::size_t>(top_k_)};
  }

  // Throws TraceError when the trace was recorded for a different shape.
  void check_matches(const ModelSpec& model) const;
  // Throws TraceError on duplicate or out-of-range expert ids.
  void validate() const;

  // Order-sensitive hash of shape and contents; used to detect comparisons
  // across different traces.
  std::uint64_t fingerprint() const;

  bool operator==(const RoutingTrace&) const = default;

 private:
  std::size_t offset(int token, int layer) const {
    return (static_cast<std::size_t>(token) * num_layers_ + layer) * top_k_;
  }

  std::string model_name_;
  int num_layers_ = 0;
  int experts_per_layer_ = 0;
  int top_k_ = 0;
  int tokens_ = 0;
  std::vector<ExpertId> experts_;
};

struct SynthParams {
  double p_token_reuse = 0.45;
  double p_layer_follow = 0.0;
  std::uint64_t seed = 0;
  int tokens = 1000;

  void validate() const;
};

// Synthetic router decisions with tunable token-to-token reuse and
// layer-to-layer following. For each slot of a record, in order:
//   1. with p_token_reuse (t > 0) copy one of this layer's previous-token
//      experts not yet chosen;
//   2. otherwise with p_layer_follow (l > 0) copy one of the previous layer's
//      experts for this token not yet chosen;
//   3. otherwise draw uniformly, re-drawing duplicates.
RoutingTrace generate_trace(const ModelSpec& model, const SynthParams& params);

// Reads a JSONL trace (gzip when the path ends in ".gz") and validates it
// against `model`: header shape, expert ids, duplicates and completeness.
RoutingTrace parse_trace(const std::filesystem::path& path, const ModelSpec& model);
void write_trace(const RoutingTrace& trace, const std::filesystem::path& path);

// Serialized JSONL form, exactly as written by write_trace.
std::string serialize_trace(const RoutingTrace& trace);

struct PatternReport {
  double consecutive_layer_match_rate = 0.0;
  std::vector<double> at_least_one_token_reuse_rate_per_layer;
  std::vector<double> both_token_reuse_rate_per_layer;
  double persistence_2_rate = 0.0;
  double persistence_3plus_rate = 0.0;

  double mean_at_least_one_token_reuse() const;
  bool operator==(const PatternReport&) const = default;
};

// OpenMP over layers. Requires >= 2 tokens and >= 2 layers.
PatternReport analyze_patterns(const RoutingTrace& trace);
// Straight token-major loop kept as the reference for the parallel kernel.
PatternReport analyze_patterns_serial(const RoutingTrace& trace);

}  // namespace moesim
