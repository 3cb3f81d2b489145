#include <algorithm>
#include <list>

#include "moesim/reference/oracles.hpp"

namespace moesim::reference {

ReplayCounts replay_reference(const RoutingTrace& trace, int covered_layers, int ways, Replacement policy) {
  // front = most recently used (LRU) / most recently inserted (FIFO)
  std::vector<std::list<ExpertId>> sets(static_cast<std::size_t>(covered_layers));
  ReplayCounts c;
  for (int t = 0; t < trace.tokens(); ++t) {
    for (int l = 0; l < trace.num_layers(); ++l) {
      ++c.accesses;
      auto request = trace.selection(t, l);
      if (l >= covered_layers) continue;
      auto& set = sets[l];
      std::vector<ExpertId> missing;
      int hits = 0;
      for (ExpertId e : request) {
        auto it = std::find(set.begin(), set.end(), e);
        if (it == set.end()) {
          missing.push_back(e);
          continue;
        }
        ++hits;
        if (policy == Replacement::Lru) set.splice(set.begin(), set, it);
      }
      c.expert_hits += hits;
      if (hits > 0) ++c.at_least_one;
      if (missing.empty()) ++c.all_k;
      for (ExpertId e : missing) {
        if (static_cast<int>(set.size()) == ways) {
          set.pop_back();
          ++c.evictions;
        }
        set.push_front(e);
      }
    }
  }
  return c;
}

}  // namespace moesim::reference
