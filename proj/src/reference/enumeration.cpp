#include <algorithm>
#include <functional>

#include "moesim/reference/oracles.hpp"

namespace moesim::reference {

namespace {

// All k-subsets of {0..n-1} as sorted vectors.
std::vector<std::vector<int>> subsets(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int from) {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    for (int i = from; i < n; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
  return out;
}

int shared(const std::vector<int>& a, const std::vector<int>& b) {
  int s = 0;
  for (int x : a) s += std::count(b.begin(), b.end(), x) > 0;
  return s;
}

}  // namespace

RatePair enumerate_random_policy(int n, int ways) {
  RatePair r;
  r.den = 0;
  const auto pairs = subsets(n, 2);
  for (const auto& resident : subsets(n, ways)) {
    for (const auto& req : pairs) {
      const int s = shared(req, resident);
      r.at_least_one_num += s >= 1;
      r.both_num += s == 2;
      ++r.den;
    }
  }
  return r;
}

double enumerate_uniform_overlap(int n, int k) {
  const auto sets = subsets(n, k);
  std::int64_t hit = 0, total = 0;
  for (const auto& a : sets) {
    for (const auto& b : sets) {
      hit += shared(a, b) > 0;
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

double enumerate_token_reuse(double p, int n, int k, bool all_k) {
  // Previous record is {0, ..., k-1} without loss of generality.
  std::vector<int> picked;
  std::function<double(double)> walk = [&](double prob) -> double {
    if (static_cast<int>(picked.size()) == k) {
      int s = 0;
      for (int e : picked) s += e < k;
      return (all_k ? s == k : s > 0) ? prob : 0.0;
    }
    auto taken = [&](int e) { return std::find(picked.begin(), picked.end(), e) != picked.end(); };
    double total = 0.0;
    // Reuse branch: uniform over previous experts not yet picked.
    std::vector<int> reuse;
    for (int e = 0; e < k; ++e) {
      if (!taken(e)) reuse.push_back(e);
    }
    if (p > 0.0 && !reuse.empty()) {
      for (int e : reuse) {
        picked.push_back(e);
        total += walk(prob * p / static_cast<double>(reuse.size()));
        picked.pop_back();
      }
    }
    // Fresh branch: uniform over all experts not yet picked.
    const double fresh = reuse.empty() ? 1.0 : 1.0 - p;
    if (fresh > 0.0) {
      const int free_count = n - static_cast<int>(picked.size());
      for (int e = 0; e < n; ++e) {
        if (taken(e)) continue;
        picked.push_back(e);
        total += walk(prob * fresh / static_cast<double>(free_count));
        picked.pop_back();
      }
    }
    return total;
  };
  return walk(1.0);
}

}  // namespace moesim::reference
