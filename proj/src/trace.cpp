#include "moesim/trace.hpp"

#include <algorithm>
#include <cmath>

#include "moesim/error.hpp"
#include "moesim/rng.hpp"

namespace moesim {

RoutingTrace::RoutingTrace(std::string model_name, int num_layers, int experts_per_layer, int top_k,
                           int tokens)
    : model_name_(std::move(model_name)),
      num_layers_(num_layers),
      experts_per_layer_(experts_per_layer),
      top_k_(top_k),
      tokens_(tokens),
      experts_(static_cast<std::size_t>(tokens) * num_layers * top_k, 0) {
  if (num_layers < 1 || experts_per_layer < 1 || top_k < 1 || top_k > experts_per_layer || tokens < 0) {
    throw TraceError("invalid trace shape");
  }
}

void RoutingTrace::check_matches(const ModelSpec& model) const {
  if (model.num_layers != num_layers_ || model.experts_per_layer != experts_per_layer_ ||
      model.top_k != top_k_) {
    throw TraceError("trace shape (layers=" + std::to_string(num_layers_) +
                     ", experts=" + std::to_string(experts_per_layer_) + ", k=" + std::to_string(top_k_) +
                     ") does not match model '" + model.name + "'");
  }
}

void RoutingTrace::validate() const {
  for (int t = 0; t < tokens_; ++t) {
    for (int l = 0; l < num_layers_; ++l) {
      auto sel = selection(t, l);
      for (std::size_t i = 0; i < sel.size(); ++i) {
        if (sel[i] < 0 || sel[i] >= experts_per_layer_) {
          throw TraceError("expert id " + std::to_string(sel[i]) + " out of range at t=" + std::to_string(t) +
                           " l=" + std::to_string(l));
        }
        for (std::size_t j = 0; j < i; ++j) {
          if (sel[i] == sel[j]) {
            throw TraceError("duplicate expert " + std::to_string(sel[i]) + " at t=" + std::to_string(t) +
                             " l=" + std::to_string(l));
          }
        }
      }
    }
  }
}

std::uint64_t RoutingTrace::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(num_layers_));
  mix(static_cast<std::uint64_t>(experts_per_layer_));
  mix(static_cast<std::uint64_t>(top_k_));
  mix(static_cast<std::uint64_t>(tokens_));
  for (ExpertId e : experts_) mix(static_cast<std::uint64_t>(e));
  return h;
}

void SynthParams::validate() const {
  auto prob = [](double p, const char* key) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(key, "probability must be in [0, 1], got " + std::to_string(p));
  };
  prob(p_token_reuse, "p_token_reuse");
  prob(p_layer_follow, "p_layer_follow");
  if (tokens < 1) throw ConfigError("tokens", "must be >= 1");
}

namespace {

bool chosen(std::span<const ExpertId> picked, ExpertId e) {
  return std::find(picked.begin(), picked.end(), e) != picked.end();
}

// Uniform pick among `source` entries not already in `picked`; -1 if none.
ExpertId pick_unchosen(Rng& rng, std::span<const ExpertId> source, std::span<const ExpertId> picked) {
  ExpertId candidates[64];
  std::size_t count = 0;
  for (ExpertId e : source) {
    if (!chosen(picked, e)) candidates[count++] = e;
  }
  if (count == 0) return -1;
  return candidates[rng.below(count)];
}

}  // namespace

RoutingTrace generate_trace(const ModelSpec& model, const SynthParams& params) {
  model.validate();
  params.validate();
  if (model.top_k > 64) throw ConfigError("model.top_k", "generator supports top_k <= 64");

  RoutingTrace trace(model.name, model.num_layers, model.experts_per_layer, model.top_k, params.tokens);
  Rng rng(derive_seed(params.seed, 0x7472616365ULL));  // "trace"
  const int k = model.top_k;

  for (int t = 0; t < params.tokens; ++t) {
    for (int l = 0; l < model.num_layers; ++l) {
      auto out = trace.selection(t, l);
      for (int slot = 0; slot < k; ++slot) {
        auto picked = std::span<const ExpertId>(out.data(), static_cast<std::size_t>(slot));
        ExpertId e = -1;
        if (t > 0 && rng.bernoulli(params.p_token_reuse)) {
          e = pick_unchosen(rng, trace.selection(t - 1, l), picked);
        }
        if (e < 0 && l > 0 && rng.bernoulli(params.p_layer_follow)) {
          e = pick_unchosen(rng, trace.selection(t, l - 1), picked);
        }
        if (e < 0) {
          do {
            e = static_cast<ExpertId>(rng.below(static_cast<std::uint64_t>(model.experts_per_layer)));
          } while (chosen(picked, e));
        }
        out[slot] = e;
      }
    }
  }
  return trace;
}

double PatternReport::mean_at_least_one_token_reuse() const {
  if (at_least_one_token_reuse_rate_per_layer.empty()) return 0.0;
  double sum = 0.0;
  for (double r : at_least_one_token_reuse_rate_per_layer) sum += r;
  return sum / static_cast<double>(at_least_one_token_reuse_rate_per_layer.size());
}

}  // namespace moesim
