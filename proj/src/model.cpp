#include "moesim/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "moesim/error.hpp"

namespace moesim {

namespace {

void require_positive(double value, const std::string& key) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw ConfigError(key, "must be a positive duration, got " + std::to_string(value));
  }
}

}  // namespace

void ModelSpec::validate() const {
  if (name.empty()) throw ConfigError("model.name", "must not be empty");
  if (num_layers < 1) throw ConfigError("model.num_layers", "must be >= 1");
  if (experts_per_layer < 1) throw ConfigError("model.experts_per_layer", "must be >= 1");
  if (top_k < 1 || top_k > experts_per_layer) {
    throw ConfigError("model.top_k", "must satisfy 1 <= top_k <= experts_per_layer");
  }
  if (bytes_per_expert == 0) throw ConfigError("model.bytes_per_expert", "must be > 0");
}

void HardwareSpec::validate() const {
  if (gpu_memory_bytes == 0) throw ConfigError("hardware.gpu_memory_bytes", "must be > 0");
  if (weight_channel_count < 1) throw ConfigError("hardware.weight_channel_count", "must be >= 1");
  if (activation_channel_count < 1) {
    throw ConfigError("hardware.activation_channel_count", "must be >= 1");
  }
  for (int t : cpu_thread_options) {
    if (t < 1) throw ConfigError("hardware.cpu_thread_options", "thread counts must be >= 1");
  }
}

void CostModel::validate() const {
  require_positive(t_gpu_moe_layer_ms, "costs.t_gpu_moe_layer_ms");
  require_positive(t_act_roundtrip_ms, "costs.t_act_roundtrip_ms");
  require_positive(t_weight_moe_layer_ms, "costs.t_weight_moe_layer_ms");
  // Attention time may be calibrated to zero, never below.
  if (!(t_other_layer_ms >= 0.0) || !std::isfinite(t_other_layer_ms)) {
    throw ConfigError("costs.t_other_layer_ms", "must be >= 0");
  }
  if (t_cpu_moe_layer_ms.empty()) throw ConfigError("costs.t_cpu_moe_layer_ms", "must not be empty");
  for (const auto& [threads, ms] : t_cpu_moe_layer_ms) {
    if (threads < 1) throw ConfigError("costs.t_cpu_moe_layer_ms", "thread counts must be >= 1");
    require_positive(ms, "costs.t_cpu_moe_layer_ms." + std::to_string(threads));
  }
  for (const auto* watts : {&p_cpu_watts, &p_gpu_watts}) {
    const char* key = watts == &p_cpu_watts ? "costs.p_cpu_watts" : "costs.p_gpu_watts";
    for (const auto& [threads, w] : *watts) {
      if (!(w > 0.0)) throw ConfigError(std::string(key) + "." + std::to_string(threads), "must be > 0");
    }
  }
}

double CostModel::cpu_layer_ms(int threads) const {
  auto it = t_cpu_moe_layer_ms.find(threads);
  if (it == t_cpu_moe_layer_ms.end()) {
    throw ConfigError("costs.t_cpu_moe_layer_ms." + std::to_string(threads),
                      "no CPU cost entry for this thread count");
  }
  return it->second;
}

void CostModel::require_threads(int threads) const {
  cpu_layer_ms(threads);
  if (!p_cpu_watts.contains(threads)) {
    throw ConfigError("costs.p_cpu_watts." + std::to_string(threads), "no power entry for this thread count");
  }
  if (!p_gpu_watts.contains(threads)) {
    throw ConfigError("costs.p_gpu_watts." + std::to_string(threads), "no power entry for this thread count");
  }
}

CacheGeometry derive_cache_geometry(const ModelSpec& model, const HardwareSpec& hw, int ways) {
  if (ways < 1) throw ConfigError("ways", "must be >= 1");
  if (model.bytes_per_expert == 0) throw ConfigError("model.bytes_per_expert", "must be > 0");
  if (hw.gpu_memory_bytes < model.resident_bytes) {
    throw ConfigError("hardware.gpu_memory_bytes", "smaller than the model's resident_bytes");
  }
  const Bytes spare = hw.gpu_memory_bytes - model.resident_bytes;
  const Bytes available = spare > hw.runtime_reserved_bytes ? spare - hw.runtime_reserved_bytes : 0;

  const Bytes slots = available / model.bytes_per_expert;
  if (slots > static_cast<Bytes>(std::numeric_limits<int>::max())) {
    throw ConfigError("model.bytes_per_expert", "too small for the GPU memory: slot count overflows");
  }

  CacheGeometry g;
  g.ways = ways;
  g.total_slots = static_cast<int>(slots);
  g.indexes = g.total_slots / ways;
  g.covered_layers = std::min(g.indexes, model.num_layers);
  return g;
}

void SystemConfig::validate() const {
  model.validate();
  hardware.validate();
  costs.validate();
  for (int t : hardware.cpu_thread_options) {
    costs.require_threads(t);
  }
}

}  // namespace moesim
