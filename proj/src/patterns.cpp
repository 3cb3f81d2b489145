#include <algorithm>

#include "moesim/error.hpp"
#include "moesim/trace.hpp"

namespace moesim {

namespace {

int overlap(std::span<const ExpertId> a, std::span<const ExpertId> b) {
  int n = 0;
  for (ExpertId x : a) n += std::find(b.begin(), b.end(), x) != b.end();
  return n;
}

// True if some expert of `cur` appears in each of the `depth` preceding
// tokens' selections for the same layer.
bool persists(const RoutingTrace& trace, int t, int l, int depth) {
  for (ExpertId e : trace.selection(t, l)) {
    bool everywhere = true;
    for (int back = 1; back <= depth && everywhere; ++back) {
      auto prev = trace.selection(t - back, l);
      everywhere = std::find(prev.begin(), prev.end(), e) != prev.end();
    }
    if (everywhere) return true;
  }
  return false;
}

struct LayerCounts {
  long long layer_match = 0;
  long long reuse_any = 0;
  long long reuse_all = 0;
  long long p2_num = 0, p2_den = 0;
  long long p3_num = 0, p3_den = 0;
};

void check_shape(const RoutingTrace& trace) {
  if (trace.tokens() < 2) throw TraceError("pattern analysis needs at least 2 tokens");
  if (trace.num_layers() < 2) throw TraceError("pattern analysis needs at least 2 layers");
}

double ratio(long long num, long long den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

PatternReport finish(const RoutingTrace& trace, const std::vector<LayerCounts>& per_layer) {
  const int L = trace.num_layers();
  const int T = trace.tokens();
  PatternReport r;
  LayerCounts total;
  for (int l = 0; l < L; ++l) {
    const LayerCounts& c = per_layer[l];
    total.layer_match += c.layer_match;
    total.p2_num += c.p2_num;
    total.p2_den += c.p2_den;
    total.p3_num += c.p3_num;
    total.p3_den += c.p3_den;
    r.at_least_one_token_reuse_rate_per_layer.push_back(ratio(c.reuse_any, T - 1));
    r.both_token_reuse_rate_per_layer.push_back(ratio(c.reuse_all, T - 1));
  }
  r.consecutive_layer_match_rate = ratio(total.layer_match, static_cast<long long>(T) * (L - 1));
  r.persistence_2_rate = ratio(total.p2_num, total.p2_den);
  r.persistence_3plus_rate = ratio(total.p3_num, total.p3_den);
  return r;
}

LayerCounts count_layer(const RoutingTrace& trace, int l) {
  LayerCounts c;
  const int k = trace.top_k();
  for (int t = 0; t < trace.tokens(); ++t) {
    auto cur = trace.selection(t, l);
    if (l > 0 && overlap(cur, trace.selection(t, l - 1)) > 0) ++c.layer_match;
    if (t == 0) continue;
    const int shared = overlap(cur, trace.selection(t - 1, l));
    if (shared == 0) continue;
    ++c.reuse_any;
    if (shared == k) ++c.reuse_all;
    if (t >= 2) {
      ++c.p2_den;
      c.p2_num += persists(trace, t, l, 2);
    }
    if (t >= 3) {
      ++c.p3_den;
      c.p3_num += persists(trace, t, l, 3);
    }
  }
  return c;
}

}  // namespace

PatternReport analyze_patterns(const RoutingTrace& trace) {
  check_shape(trace);
  const int L = trace.num_layers();
  std::vector<LayerCounts> per_layer(static_cast<std::size_t>(L));
#pragma omp parallel for schedule(static)
  for (int l = 0; l < L; ++l) {
    per_layer[l] = count_layer(trace, l);
  }
  return finish(trace, per_layer);
}

PatternReport analyze_patterns_serial(const RoutingTrace& trace) {
  check_shape(trace);
  const int L = trace.num_layers();
  const int k = trace.top_k();
  std::vector<LayerCounts> per_layer(static_cast<std::size_t>(L));
  for (int t = 0; t < trace.tokens(); ++t) {
    for (int l = 0; l < L; ++l) {
      LayerCounts& c = per_layer[l];
      auto cur = trace.selection(t, l);
      if (l > 0) {
        auto below = trace.selection(t, l - 1);
        bool any = false;
        for (ExpertId e : cur) any = any || std::count(below.begin(), below.end(), e) > 0;
        c.layer_match += any;
      }
      if (t == 0) continue;
      auto prev = trace.selection(t - 1, l);
      int shared = 0;
      for (ExpertId e : cur) shared += static_cast<int>(std::count(prev.begin(), prev.end(), e));
      if (shared == 0) continue;
      ++c.reuse_any;
      c.reuse_all += shared == k;
      for (int depth = 2; depth <= 3; ++depth) {
        if (t < depth) continue;
        bool hit = false;
        for (ExpertId e : cur) {
          int present = 0;
          for (int back = 1; back <= depth; ++back) {
            auto s = trace.selection(t - back, l);
            present += std::count(s.begin(), s.end(), e) > 0;
          }
          hit = hit || present == depth;
        }
        if (depth == 2) {
          ++c.p2_den;
          c.p2_num += hit;
        } else {
          ++c.p3_den;
          c.p3_num += hit;
        }
      }
    }
  }
  return finish(trace, per_layer);
}

}  // namespace moesim
