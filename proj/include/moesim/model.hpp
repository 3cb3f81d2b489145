#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace moesim {

using Bytes = std::uint64_t;

inline constexpr Bytes kMiB = Bytes{1} << 20;
inline constexpr Bytes kGiB = Bytes{1} << 30;

// Static MoE architecture.
struct ModelSpec {
  std::string name;
  int num_layers = 0;
  int experts_per_layer = 0;
  int top_k = 0;
  Bytes bytes_per_expert = 0;
  // Attention, router, norms and KV budget kept permanently on the GPU.
  Bytes resident_bytes = 0;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct HardwareSpec {
  Bytes gpu_memory_bytes = 0;
  // Driver/runtime reservation that is neither model state nor cache.
  Bytes runtime_reserved_bytes = 0;
  std::vector<int> cpu_thread_options;
  int weight_channel_count = 1;
  int activation_channel_count = 1;

  void validate() const;
  bool operator==(const HardwareSpec&) const = default;
};

// Calibrated per-device timings, in milliseconds, and package power figures.
// GPU, CPU and weight costs are per MoE layer for the top-k selected experts;
// per-expert costs are the layer cost divided by k.
struct CostModel {
  double t_gpu_moe_layer_ms = 0.0;
  std::map<int, double> t_cpu_moe_layer_ms;
  double t_act_roundtrip_ms = 0.0;
  double t_weight_moe_layer_ms = 0.0;
  double t_other_layer_ms = 0.5;
  std::map<int, double> p_cpu_watts;
  std::map<int, double> p_gpu_watts;

  void validate() const;
  // Throws ConfigError when `threads` has no entry.
  double cpu_layer_ms(int threads) const;
  void require_threads(int threads) const;

  bool operator==(const CostModel&) const = default;
};

struct CacheGeometry {
  int total_slots = 0;     // S
  int ways = 0;            // M
  int indexes = 0;         // N, as derived (may exceed the layer count)
  int covered_layers = 0;  // min(N, L): layers that own a cache set

  bool empty() const { return covered_layers == 0; }
  bool operator==(const CacheGeometry&) const = default;
};

// S = floor(available / bytes_per_expert), N = floor(S / M).
// Available memory is GPU memory minus resident model state and the runtime
// reservation; it is zero (no cache) when nothing fits.
CacheGeometry derive_cache_geometry(const ModelSpec& model, const HardwareSpec& hw, int ways);

struct SystemConfig {
  ModelSpec model;
  HardwareSpec hardware;
  CostModel costs;

  void validate() const;
  bool operator==(const SystemConfig&) const = default;
};

}  // namespace moesim
