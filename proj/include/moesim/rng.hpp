#pragma once

#include <cstdint>
#include <random>

namespace moesim {

// Seed fan-out: mixes a base seed with a stream tag so that every component
// (trace generator, per-sweep-point simulation, static cache placement) draws
// from an independent, reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream_a, std::uint64_t stream_b);

// Thin wrapper over mt19937_64. The standard distributions are
// implementation-defined, so bounded integers and uniforms are derived here
// to keep generated traces byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return p >= 1.0 || (p > 0.0 && uniform() < p); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace moesim
