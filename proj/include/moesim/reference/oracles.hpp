#pragma once

// Brute-force oracles used to check the simulator. Nothing here shares code
// with ExpertCache or the trace generator.

#include <cstdint>
#include <vector>

#include "moesim/trace.hpp"

namespace moesim::reference {

enum class Replacement { Lru, Fifo };

struct ReplayCounts {
  std::uint64_t accesses = 0;
  std::uint64_t expert_hits = 0;
  std::uint64_t at_least_one = 0;
  std::uint64_t all_k = 0;
  std::uint64_t evictions = 0;
  bool operator==(const ReplayCounts&) const = default;
};

// List-based set-associative cache over `covered_layers` sets of `ways`
// entries, replaying `trace` with instantaneous fills of every miss.
ReplayCounts replay_reference(const RoutingTrace& trace, int covered_layers, int ways, Replacement policy);

struct RatePair {
  std::int64_t at_least_one_num = 0;
  std::int64_t both_num = 0;
  std::int64_t den = 1;
  double at_least_one() const { return static_cast<double>(at_least_one_num) / static_cast<double>(den); }
  double both() const { return static_cast<double>(both_num) / static_cast<double>(den); }
};

// Enumerates every static resident set of size `ways` and every router pair,
// counting pairs with >= 1 and with 2 resident experts.
RatePair enumerate_random_policy(int n, int ways);

// Fraction of (previous, current) pairs of uniform top-k sets that share at
// least one expert, by enumerating all k-subsets.
double enumerate_uniform_overlap(int n, int k);

// Exact probability, by walking every branch of the generator's per-slot
// rules with layer-follow disabled, that a record shares >= 1 expert with
// the same layer's previous record. `all_k` returns the probability that the
// whole set repeats instead.
double enumerate_token_reuse(double p_token_reuse, int n, int k, bool all_k = false);

}  // namespace moesim::reference
