#include <doctest.h>

#include "moesim/config.hpp"
#include "moesim/error.hpp"
#include "moesim/model.hpp"
#include "moesim/rng.hpp"

using namespace moesim;

TEST_CASE("mixtral preset geometry: 56 slots, 14 indexes at 4 ways") {
  const SystemConfig c = preset("mixtral-8x7b");
  const CacheGeometry g = derive_cache_geometry(c.model, c.hardware, 4);
  CHECK(g.total_slots == 56);
  CHECK(g.indexes == 14);
  CHECK(g.ways == 4);
  CHECK(g.covered_layers == 14);
}

TEST_CASE("phi preset geometry by hand") {
  // 24576 - 5120 - 256 = 19200 MiB free; 19200 / 152 = 126.3
  const SystemConfig c = preset("phi3.5");
  const CacheGeometry g = derive_cache_geometry(c.model, c.hardware, 8);
  CHECK(g.total_slots == 126);
  CHECK(g.indexes == 15);
  CHECK(g.covered_layers == 15);

  const CacheGeometry one = derive_cache_geometry(c.model, c.hardware, 1);
  CHECK(one.indexes == 126);
  CHECK(one.covered_layers == 32);
}

TEST_CASE("no spare memory gives an empty cache") {
  SystemConfig c = preset("mixtral-8x7b");
  c.hardware.gpu_memory_bytes = c.model.resident_bytes;
  const CacheGeometry g = derive_cache_geometry(c.model, c.hardware, 4);
  CHECK(g.total_slots == 0);
  CHECK(g.indexes == 0);
  CHECK(g.empty());

  // Less than one expert past the reservation.
  c.hardware.gpu_memory_bytes = c.model.resident_bytes + c.hardware.runtime_reserved_bytes + c.model.bytes_per_expert - 1;
  CHECK(derive_cache_geometry(c.model, c.hardware, 1).total_slots == 0);
}

TEST_CASE("geometry errors") {
  SystemConfig c = preset("mixtral-8x7b");
  CHECK_THROWS_AS(derive_cache_geometry(c.model, c.hardware, 0), ConfigError);
  c.hardware.gpu_memory_bytes = c.model.resident_bytes - 1;
  try {
    derive_cache_geometry(c.model, c.hardware, 4);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "hardware.gpu_memory_bytes");
  }
}

TEST_CASE("geometry properties over random hardware") {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    ModelSpec m{"m", 1 + int(rng.below(64)), 2 + int(rng.below(30)), 1, (1 + rng.below(1000)) * kMiB,
                rng.below(8) * kGiB};
    HardwareSpec hw;
    hw.gpu_memory_bytes = m.resident_bytes + rng.below(64 * kGiB);
    hw.runtime_reserved_bytes = rng.below(512) * kMiB;
    const int ways = 1 + int(rng.below(16));
    const CacheGeometry g = derive_cache_geometry(m, hw, ways);
    CHECK(g.indexes * g.ways <= g.total_slots);
    CHECK(g.covered_layers == std::min(g.indexes, m.num_layers));
    CHECK(g.covered_layers >= 0);

    // More memory never shrinks S; more ways never grows N.
    HardwareSpec bigger = hw;
    bigger.gpu_memory_bytes += rng.below(4 * kGiB);
    CHECK(derive_cache_geometry(m, bigger, ways).total_slots >= g.total_slots);
    CHECK(derive_cache_geometry(m, hw, ways + 1).indexes <= g.indexes);
  }
}

TEST_CASE("presets validate and round-trip through JSON") {
  for (const auto& name : preset_names()) {
    const SystemConfig c = preset(name);
    CHECK_NOTHROW(c.validate());
    CHECK(config_from_json(config_to_json(c)) == c);
  }
  CHECK_THROWS_AS(preset("llama"), ConfigError);
}

TEST_CASE("mixtral preset carries the measured cost and power tables") {
  const CostModel k = preset("mixtral-8x7b").costs;
  CHECK(k.t_gpu_moe_layer_ms == 0.25);
  CHECK(k.cpu_layer_ms(24) == 7.34);
  CHECK(k.cpu_layer_ms(1) == 44.12);
  CHECK(k.t_act_roundtrip_ms == 0.11);
  CHECK(k.t_weight_moe_layer_ms == 28.02);
  CHECK(k.p_cpu_watts.at(24) + k.p_gpu_watts.at(24) == doctest::Approx(245.4));
  CHECK_THROWS_AS(k.cpu_layer_ms(3), ConfigError);
}

TEST_CASE("config errors name the offending key") {
  nlohmann::json doc = config_to_json(preset("mixtral-8x7b"));
  auto key_of = [](const nlohmann::json& d) -> std::string {
    try {
      config_from_json(d);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return "";
  };

  SUBCASE("missing section") {
    doc.erase("costs");
    CHECK(key_of(doc) == "costs");
  }
  SUBCASE("missing field") {
    doc["model"].erase("top_k");
    CHECK(key_of(doc) == "model.top_k");
  }
  SUBCASE("negative duration") {
    doc["costs"]["t_gpu_moe_layer_ms"] = -1.0;
    CHECK(key_of(doc) == "costs.t_gpu_moe_layer_ms");
  }
  SUBCASE("negative attention time") {
    doc["costs"]["t_other_layer_ms"] = -0.1;
    CHECK(key_of(doc) == "costs.t_other_layer_ms");
  }
  SUBCASE("thread option without a cost entry") {
    doc["hardware"]["cpu_thread_options"].push_back(32);
    CHECK(key_of(doc) == "costs.t_cpu_moe_layer_ms.32");
  }
  SUBCASE("non-integer thread key") {
    doc["costs"]["p_cpu_watts"]["many"] = 10.0;
    CHECK(key_of(doc) == "costs.p_cpu_watts.many");
  }
  SUBCASE("wrong type") {
    doc["model"]["num_layers"] = "thirty-two";
    CHECK(key_of(doc) == "model.num_layers");
  }
  SUBCASE("top_k above expert count") {
    doc["model"]["top_k"] = 9;
    CHECK(key_of(doc) == "model.top_k");
  }
  SUBCASE("unknown schema") {
    doc["schema"] = "other.v9";
    CHECK(key_of(doc) == "schema");
  }
}

TEST_CASE("zero attention time is accepted") {
  CostModel k = preset("mixtral-8x7b").costs;
  k.t_other_layer_ms = 0.0;
  CHECK_NOTHROW(k.validate());
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));

  Rng rng(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    const auto v = rng.below(5);
    REQUIRE(v < 5);
    ++counts[v];
  }
  for (int c : counts) CHECK(c == doctest::Approx(10000).epsilon(0.05));
}
