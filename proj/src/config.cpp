#include "moesim/config.hpp"

#include <fstream>

#include "moesim/error.hpp"

namespace moesim {

using nlohmann::json;

namespace {

const std::vector<int> kThreads = {1, 2, 4, 8, 16, 24};

std::map<int, double> zip(const std::vector<double>& values) {
  std::map<int, double> out;
  for (std::size_t i = 0; i < kThreads.size(); ++i) out[kThreads[i]] = values[i];
  return out;
}

HardwareSpec rtx4090_host() {
  HardwareSpec hw;
  hw.gpu_memory_bytes = 24 * kGiB;
  // CUDA context plus allocator headroom on a 24 GiB card.
  hw.runtime_reserved_bytes = 256 * kMiB;
  hw.cpu_thread_options = kThreads;
  hw.weight_channel_count = 1;
  hw.activation_channel_count = 1;
  return hw;
}

SystemConfig mixtral() {
  SystemConfig c;
  c.model = {"mixtral-8x7b", 32, 8, 2, 340 * kMiB, 5 * kGiB};
  c.hardware = rtx4090_host();
  // Expert FFN timings measured per layer (two selected experts).
  c.costs.t_gpu_moe_layer_ms = 0.25;
  c.costs.t_cpu_moe_layer_ms = zip({44.12, 25.53, 18.34, 15.76, 10.96, 7.34});
  c.costs.t_act_roundtrip_ms = 0.11;
  c.costs.t_weight_moe_layer_ms = 28.02;
  // Fit so the best 24-thread cached configuration on a p_token_reuse=0.45
  // trace sits near 4.8 tokens/s.
  c.costs.t_other_layer_ms = 1.5;
  c.costs.p_cpu_watts = zip({86.1, 91.7, 100.3, 111.0, 133.4, 147.5});
  c.costs.p_gpu_watts = zip({91.6, 92.8, 101.0, 103.4, 99.6, 97.9});
  return c;
}

SystemConfig phi35() {
  SystemConfig c;
  c.model = {"phi3.5-moe", 32, 16, 2, 152 * kMiB, 5 * kGiB};
  c.hardware = rtx4090_host();
  c.costs.t_gpu_moe_layer_ms = 0.11;
  c.costs.t_cpu_moe_layer_ms = zip({22.73, 12.80, 8.58, 6.39, 3.92, 3.36});
  c.costs.t_act_roundtrip_ms = 0.11;
  c.costs.t_weight_moe_layer_ms = 12.26;
  c.costs.t_other_layer_ms = 0.5;
  c.costs.p_cpu_watts = zip({84.4, 88.4, 92.0, 98.4, 110.1, 118.3});
  c.costs.p_gpu_watts = zip({97.4, 100.7, 105.9, 109.2, 106.0, 109.2});
  return c;
}

const json& field(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

template <class T>
T get(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key, std::string("wrong type: ") + e.what());
  }
}

template <class T>
T get_or(const json& obj, const char* key, const std::string& path, T fallback) {
  return obj.contains(key) ? get<T>(obj, key, path) : fallback;
}

std::map<int, double> thread_map(const json& obj, const char* key, const std::string& path) {
  const json& m = field(obj, key, path);
  const std::string where = path + "." + key;
  if (!m.is_object()) throw ConfigError(where, "must be an object keyed by thread count");
  std::map<int, double> out;
  for (const auto& [k, v] : m.items()) {
    int threads = 0;
    try {
      std::size_t used = 0;
      threads = std::stoi(k, &used);
      if (used != k.size()) throw std::invalid_argument(k);
    } catch (const std::exception&) {
      throw ConfigError(where + "." + k, "thread count key is not an integer");
    }
    if (!v.is_number()) throw ConfigError(where + "." + k, "must be a number");
    out[threads] = v.get<double>();
  }
  return out;
}

json thread_map_json(const std::map<int, double>& m) {
  json out = json::object();
  for (const auto& [k, v] : m) out[std::to_string(k)] = v;
  return out;
}

}  // namespace

std::vector<std::string> preset_names() { return {"mixtral-8x7b", "phi3.5-moe"}; }

SystemConfig preset(const std::string& name) {
  if (name == "mixtral-8x7b" || name == "mixtral") return mixtral();
  if (name == "phi3.5-moe" || name == "phi3.5") return phi35();
  throw ConfigError("preset", "unknown preset '" + name + "'");
}

SystemConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  if (doc.contains("schema") && doc["schema"] != kConfigSchema) {
    throw ConfigError("schema", "unsupported schema " + doc["schema"].dump());
  }
  SystemConfig c;

  const json& m = field(doc, "model", "");
  c.model.name = get<std::string>(m, "name", "model");
  c.model.num_layers = get<int>(m, "num_layers", "model");
  c.model.experts_per_layer = get<int>(m, "experts_per_layer", "model");
  c.model.top_k = get<int>(m, "top_k", "model");
  c.model.bytes_per_expert = get<Bytes>(m, "bytes_per_expert", "model");
  c.model.resident_bytes = get<Bytes>(m, "resident_bytes", "model");

  const json& h = field(doc, "hardware", "");
  c.hardware.gpu_memory_bytes = get<Bytes>(h, "gpu_memory_bytes", "hardware");
  c.hardware.runtime_reserved_bytes = get_or<Bytes>(h, "runtime_reserved_bytes", "hardware", 0);
  c.hardware.cpu_thread_options = get<std::vector<int>>(h, "cpu_thread_options", "hardware");
  c.hardware.weight_channel_count = get_or<int>(h, "weight_channel_count", "hardware", 1);
  c.hardware.activation_channel_count = get_or<int>(h, "activation_channel_count", "hardware", 1);

  const json& k = field(doc, "costs", "");
  c.costs.t_gpu_moe_layer_ms = get<double>(k, "t_gpu_moe_layer_ms", "costs");
  c.costs.t_cpu_moe_layer_ms = thread_map(k, "t_cpu_moe_layer_ms", "costs");
  c.costs.t_act_roundtrip_ms = get<double>(k, "t_act_roundtrip_ms", "costs");
  c.costs.t_weight_moe_layer_ms = get<double>(k, "t_weight_moe_layer_ms", "costs");
  c.costs.t_other_layer_ms = get_or<double>(k, "t_other_layer_ms", "costs", 0.5);
  c.costs.p_cpu_watts = thread_map(k, "p_cpu_watts", "costs");
  c.costs.p_gpu_watts = thread_map(k, "p_gpu_watts", "costs");

  c.validate();
  return c;
}

SystemConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

json config_to_json(const SystemConfig& c) {
  json doc;
  doc["schema"] = kConfigSchema;
  doc["model"] = {
      {"name", c.model.name},
      {"num_layers", c.model.num_layers},
      {"experts_per_layer", c.model.experts_per_layer},
      {"top_k", c.model.top_k},
      {"bytes_per_expert", c.model.bytes_per_expert},
      {"resident_bytes", c.model.resident_bytes},
  };
  doc["hardware"] = {
      {"gpu_memory_bytes", c.hardware.gpu_memory_bytes},
      {"runtime_reserved_bytes", c.hardware.runtime_reserved_bytes},
      {"cpu_thread_options", c.hardware.cpu_thread_options},
      {"weight_channel_count", c.hardware.weight_channel_count},
      {"activation_channel_count", c.hardware.activation_channel_count},
  };
  doc["costs"] = {
      {"t_gpu_moe_layer_ms", c.costs.t_gpu_moe_layer_ms},
      {"t_cpu_moe_layer_ms", thread_map_json(c.costs.t_cpu_moe_layer_ms)},
      {"t_act_roundtrip_ms", c.costs.t_act_roundtrip_ms},
      {"t_weight_moe_layer_ms", c.costs.t_weight_moe_layer_ms},
      {"t_other_layer_ms", c.costs.t_other_layer_ms},
      {"p_cpu_watts", thread_map_json(c.costs.p_cpu_watts)},
      {"p_gpu_watts", thread_map_json(c.costs.p_gpu_watts)},
  };
  return doc;
}

}  // namespace moesim
