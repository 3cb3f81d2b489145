#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "moesim/error.hpp"
#include "moesim/trace.hpp"

namespace moesim::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

class UsageError : public Error {
 public:
  using Error::Error;
};

// Everything a subcommand needs; filled from flags.
struct RunManifest {
  std::string preset;
  std::filesystem::path config_path;
  std::optional<std::filesystem::path> trace_path;
  std::vector<std::string> synth;  // key=value pairs
  std::string strategy = "collaborative";
  std::string miss_exec = "split";
  std::string policy = "lru";
  std::vector<int> threads;
  std::vector<int> ways;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  bool events = false;
  bool gzip = false;
  int jobs = 0;
  int warmup = 1;
  std::optional<double> t_other_ms;
};

// key=value list -> SynthParams (unknown keys are usage errors).
SynthParams parse_synth(const std::vector<std::string>& pairs, std::uint64_t seed);

// --out, then $MOESIM_OUT_DIR, then the working directory.
std::filesystem::path resolve_out_dir(const RunManifest& m);

int cmd_gen_trace(const RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_simulate(const RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_validate(const RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_sweep(const RunManifest& m, std::ostream& out, std::ostream& err);

// Full command line entry point; returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moesim::cli
