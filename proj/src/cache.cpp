#include "moesim/cache.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "moesim/error.hpp"
#include "moesim/rng.hpp"

namespace moesim {

std::string to_string(EvictionPolicy policy) {
  switch (policy) {
    case EvictionPolicy::Lru: return "lru";
    case EvictionPolicy::Fifo: return "fifo";
    case EvictionPolicy::RandomStatic: return "random";
  }
  return "?";
}

EvictionPolicy parse_eviction_policy(const std::string& text) {
  std::string s;
  for (char c : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "lru") return EvictionPolicy::Lru;
  if (s == "fifo") return EvictionPolicy::Fifo;
  if (s == "random" || s == "random_static" || s == "random-static") return EvictionPolicy::RandomStatic;
  throw ConfigError("policy", "unknown eviction policy '" + text + "'");
}

nlohmann::json CacheStats::to_json() const {
  nlohmann::json j;
  std::vector<std::uint64_t> acc, any, all, hits, misses;
  for (const auto& l : layers) {
    acc.push_back(l.accesses);
    any.push_back(l.at_least_one_hit);
    all.push_back(l.all_k_hit);
    hits.push_back(l.expert_hits);
    misses.push_back(l.expert_misses);
  }
  j["covered_layers"] = covered_layers;
  j["accesses"] = acc;
  j["at_least_one_hit"] = any;
  j["all_k_hit"] = all;
  j["expert_hits"] = hits;
  j["expert_misses"] = misses;
  j["coverage_misses"] = coverage_misses;
  j["evictions"] = evictions;
  j["suppressed_fetches"] = suppressed_fetches;
  j["stale_completions"] = stale_completions;
  return j;
}

ExpertCache::ExpertCache(const CacheGeometry& geometry, const ModelSpec& model, EvictionPolicy policy,
                         std::uint64_t seed)
    : geometry_(geometry),
      policy_(policy),
      num_layers_(model.num_layers),
      experts_per_layer_(model.experts_per_layer),
      sets_(static_cast<std::size_t>(std::max(0, geometry.covered_layers))),
      pending_generation_(static_cast<std::size_t>(model.num_layers) * model.experts_per_layer, 0) {
  if (geometry_.covered_layers > num_layers_ || geometry_.covered_layers < 0) {
    throw std::invalid_argument("cache geometry covers more layers than the model has");
  }
  if (geometry_.covered_layers > 0 && geometry_.ways < 1) {
    throw std::invalid_argument("cache with covered layers needs at least one way");
  }
  stats_.covered_layers = geometry_.covered_layers;
  stats_.experts_per_layer = experts_per_layer_;
  stats_.layers.resize(static_cast<std::size_t>(num_layers_));
  stats_.expert_hits.assign(pending_generation_.size(), 0);
  stats_.expert_misses.assign(pending_generation_.size(), 0);

  if (policy_ == EvictionPolicy::RandomStatic) {
    Rng rng(derive_seed(seed, 0x737461746963ULL));  // "static"
    const int keep = std::min(geometry_.ways, experts_per_layer_);
    std::vector<ExpertId> ids(static_cast<std::size_t>(experts_per_layer_));
    for (auto& set : sets_) {
      std::iota(ids.begin(), ids.end(), 0);
      // Partial Fisher-Yates: the first `keep` entries are a uniform sample.
      for (int i = 0; i < keep; ++i) {
        const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(experts_per_layer_ - i)));
        std::swap(ids[i], ids[j]);
        set.push_back({ids[i], 0, 0});
      }
    }
  }
}

ExpertCache::Slot* ExpertCache::find(int layer, ExpertId expert) {
  if (!covers(layer)) return nullptr;
  for (auto& s : sets_[layer]) {
    if (s.expert == expert) return &s;
  }
  return nullptr;
}

const ExpertCache::Slot* ExpertCache::find(int layer, ExpertId expert) const {
  return const_cast<ExpertCache*>(this)->find(layer, expert);
}

bool ExpertCache::resident(int layer, ExpertId expert) const { return find(layer, expert) != nullptr; }

bool ExpertCache::pending(int layer, ExpertId expert) const {
  return pending_generation_[key(layer, expert)] != 0;
}

std::vector<ExpertId> ExpertCache::resident_set(int layer) const {
  std::vector<ExpertId> out;
  if (covers(layer)) {
    for (const auto& s : sets_[layer]) out.push_back(s.expert);
  }
  return out;
}

LookupResult ExpertCache::lookup(int layer, std::span<const ExpertId> experts) {
  LookupResult r;
  r.covered = covers(layer);
  for (ExpertId e : experts) {
    Slot* slot = find(layer, e);
    if (slot) {
      // Hits are touched in request order.
      if (policy_ == EvictionPolicy::Lru) slot->last_use = ++clock_;
      r.hits.push_back(e);
      ++stats_.expert_hits[key(layer, e)];
    } else {
      r.misses.push_back(e);
      ++stats_.expert_misses[key(layer, e)];
    }
  }
  LayerStats& ls = stats_.layers[layer];
  ++ls.accesses;
  ls.expert_hits += r.hits.size();
  ls.expert_misses += r.misses.size();
  if (!r.hits.empty()) ++ls.at_least_one_hit;
  if (r.misses.empty() && !experts.empty()) ++ls.all_k_hit;
  if (!r.covered) ++stats_.coverage_misses;
  return r;
}

std::optional<FetchTicket> ExpertCache::request_fetch(int layer, ExpertId expert) {
  if (!covers(layer)) {
    throw std::invalid_argument("fetch requested for uncovered layer " + std::to_string(layer));
  }
  if (policy_ == EvictionPolicy::RandomStatic || pending(layer, expert) || resident(layer, expert)) {
    ++stats_.suppressed_fetches;
    return std::nullopt;
  }
  const std::uint64_t gen = next_generation_++;
  pending_generation_[key(layer, expert)] = gen;
  ++pending_count_;
  return FetchTicket{layer, expert, gen};
}

std::optional<Eviction> ExpertCache::complete_fetch(const FetchTicket& ticket) {
  if (!covers(ticket.layer)) throw std::logic_error("completion for uncovered layer");
  std::uint64_t& gen = pending_generation_[key(ticket.layer, ticket.expert)];
  if (gen == 0) throw std::logic_error("fetch ticket completed twice or never issued");
  if (gen != ticket.generation) {
    ++stats_.stale_completions;
    return std::nullopt;
  }
  gen = 0;
  --pending_count_;

  ++clock_;
  auto& set = sets_[ticket.layer];
  std::optional<Eviction> evicted;
  if (static_cast<int>(set.size()) >= geometry_.ways) {
    auto victim = set.begin();
    for (auto it = set.begin(); it != set.end(); ++it) {
      const bool older = policy_ == EvictionPolicy::Lru ? it->last_use < victim->last_use
                                                        : it->inserted < victim->inserted;
      if (older) victim = it;
    }
    evicted = Eviction{ticket.layer, victim->expert};
    set.erase(victim);
    ++stats_.evictions;
  }
  // Insertion counts as a use: the expert was just demanded.
  set.push_back({ticket.expert, clock_, clock_});
  return evicted;
}

void ExpertCache::check_invariants() const {
  for (std::size_t l = 0; l < sets_.size(); ++l) {
    const auto& set = sets_[l];
    if (static_cast<int>(set.size()) > geometry_.ways) throw std::logic_error("set over capacity");
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (set[i].expert == set[j].expert) throw std::logic_error("duplicate expert in set");
      }
      if (pending(static_cast<int>(l), set[i].expert)) throw std::logic_error("expert both pending and resident");
    }
  }
  std::size_t pend = 0;
  for (std::size_t i = 0; i < pending_generation_.size(); ++i) {
    if (pending_generation_[i] == 0) continue;
    ++pend;
    if (static_cast<int>(i / experts_per_layer_) >= geometry_.covered_layers) {
      throw std::logic_error("pending fetch on uncovered layer");
    }
  }
  if (pend != pending_count_) throw std::logic_error("pending count out of sync");
  for (const auto& ls : stats_.layers) {
    if (ls.all_k_hit > ls.at_least_one_hit || ls.at_least_one_hit > ls.accesses) {
      throw std::logic_error("layer stats out of order");
    }
  }
}

RandomPolicyRates random_policy_hit_rates(int n, int ways, int top_k) {
  if (top_k != 2) throw std::invalid_argument("random-policy closed form is defined for top-2 routing only");
  if (n < 2) throw std::invalid_argument("need at least two experts per layer");
  if (ways < 1 || ways > n) throw std::invalid_argument("ways must lie in [1, n]");
  auto reduce = [](std::int64_t num, std::int64_t den) {
    const std::int64_t g = std::gcd(num, den);
    return Fraction{num / g, den / g};
  };
  const std::int64_t N = n, M = ways;
  const std::int64_t den = N * (N - 1);
  // 1 - ((n-M)/n) * ((n-M-1)/(n-1)), and (M/n) * ((M-1)/(n-1))
  return {reduce(den - (N - M) * (N - M - 1), den), reduce(M * (M - 1), den)};
}

}  // namespace moesim
