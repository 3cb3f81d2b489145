#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moesim/model.hpp"
#include "moesim/trace.hpp"

namespace moesim {

enum class EvictionPolicy { Lru, Fifo, RandomStatic };

std::string to_string(EvictionPolicy policy);
EvictionPolicy parse_eviction_policy(const std::string& text);

struct LayerStats {
  std::uint64_t accesses = 0;
  std::uint64_t at_least_one_hit = 0;
  std::uint64_t all_k_hit = 0;
  std::uint64_t expert_hits = 0;
  std::uint64_t expert_misses = 0;

  bool operator==(const LayerStats&) const = default;
};

struct CacheStats {
  int covered_layers = 0;
  int experts_per_layer = 0;
  std::vector<LayerStats> layers;            // one per model layer
  std::vector<std::uint64_t> expert_hits;    // [layer * n + expert]
  std::vector<std::uint64_t> expert_misses;  // [layer * n + expert]
  std::uint64_t coverage_misses = 0;         // lookups on layers without a set
  std::uint64_t evictions = 0;
  std::uint64_t suppressed_fetches = 0;
  std::uint64_t stale_completions = 0;

  nlohmann::json to_json() const;
  bool operator==(const CacheStats&) const = default;
};

struct LookupResult {
  std::vector<ExpertId> hits;
  std::vector<ExpertId> misses;
  bool covered = false;
};

struct FetchTicket {
  int layer = 0;
  ExpertId expert = 0;
  std::uint64_t generation = 0;
};

struct Eviction {
  int layer = 0;
  ExpertId expert = 0;
};

// GPU expert cache: one M-way set per covered layer (layer l maps to set l),
// covering layers [0, min(N, L)). Misses are filled only through
// request_fetch / complete_fetch, which lets the engine model in-flight
// transfers. RandomStatic sets are filled once at construction and never
// change.
class ExpertCache {
 public:
  ExpertCache(const CacheGeometry& geometry, const ModelSpec& model, EvictionPolicy policy,
              std::uint64_t seed = 0);

  const CacheGeometry& geometry() const { return geometry_; }
  EvictionPolicy policy() const { return policy_; }
  int covered_layers() const { return geometry_.covered_layers; }
  bool covers(int layer) const { return layer < geometry_.covered_layers; }

  // Partitions a request into resident and missing experts and records stats.
  // LRU refreshes recency of the hits.
  LookupResult lookup(int layer, std::span<const ExpertId> experts);

  // Registers a fetch for a missed expert. Returns nullopt (and counts a
  // suppression) when the expert is already pending or resident, or when the
  // policy is static. Throws std::invalid_argument for uncovered layers.
  std::optional<FetchTicket> request_fetch(int layer, ExpertId expert);

  // Inserts the fetched expert, evicting within its set if full. A ticket
  // superseded by a newer request for the same expert is ignored. Completing
  // a ticket that is not pending throws std::logic_error.
  std::optional<Eviction> complete_fetch(const FetchTicket& ticket);

  bool resident(int layer, ExpertId expert) const;
  bool pending(int layer, ExpertId expert) const;
  std::vector<ExpertId> resident_set(int layer) const;
  std::size_t pending_count() const { return pending_count_; }

  const CacheStats& stats() const { return stats_; }

  // Throws std::logic_error if any structural invariant is broken.
  void check_invariants() const;

 private:
  struct Slot {
    ExpertId expert;
    std::uint64_t last_use;
    std::uint64_t inserted;
  };

  std::size_t key(int layer, ExpertId expert) const {
    return static_cast<std::size_t>(layer) * experts_per_layer_ + static_cast<std::size_t>(expert);
  }
  Slot* find(int layer, ExpertId expert);
  const Slot* find(int layer, ExpertId expert) const;

  CacheGeometry geometry_;
  EvictionPolicy policy_;
  int num_layers_;
  int experts_per_layer_;
  std::vector<std::vector<Slot>> sets_;
  std::vector<std::uint64_t> pending_generation_;  // 0 = not pending
  std::size_t pending_count_ = 0;
  std::uint64_t next_generation_ = 1;
  std::uint64_t clock_ = 0;
  CacheStats stats_;
};

// Exact hit probabilities for a static random placement of M of n experts
// under uniform top-2 routing.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Fraction&) const = default;
};

struct RandomPolicyRates {
  Fraction at_least_one;
  Fraction both;
};

// Rejects M outside [1, n] and any top_k other than 2.
RandomPolicyRates random_policy_hit_rates(int n, int ways, int top_k = 2);

}  // namespace moesim
