#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "moesim/cache.hpp"
#include "moesim/config.hpp"
#include "moesim/engine.hpp"
#include "moesim/metrics.hpp"
#include "moesim/reference/oracles.hpp"
#include "moesim/rng.hpp"
#include "moesim/sweep.hpp"

namespace moesim::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSimStream = 0x73696dULL;  // "sim"

SystemConfig load_system(const RunManifest& m) {
  if (!m.preset.empty() && !m.config_path.empty()) throw UsageError("--preset and --config are exclusive");
  SystemConfig c = m.config_path.empty() ? preset(m.preset.empty() ? "mixtral-8x7b" : m.preset)
                                         : load_config(m.config_path);
  if (m.t_other_ms) {
    c.costs.t_other_layer_ms = *m.t_other_ms;
    c.costs.validate();
  }
  return c;
}

RoutingTrace load_trace(const RunManifest& m, const ModelSpec& model) {
  if (m.trace_path && !m.synth.empty()) throw UsageError("--trace and --synth are exclusive");
  if (m.trace_path) return parse_trace(*m.trace_path, model);
  if (!m.synth.empty()) return generate_trace(model, parse_synth(m.synth, m.seed));
  throw UsageError("missing trace source: pass --trace FILE or --synth key=value...");
}

Strategy make_strategy(const RunManifest& m, int threads) {
  Strategy s;
  s.kind = parse_strategy(m.strategy);
  s.miss_execution = parse_miss_execution(m.miss_exec);
  s.policy = parse_eviction_policy(m.policy);
  s.threads = threads;
  return s;
}

int default_threads(const SystemConfig& c) {
  const auto& opts = c.hardware.cpu_thread_options;
  if (!opts.empty()) return *std::max_element(opts.begin(), opts.end());
  return c.costs.t_cpu_moe_layer_ms.rbegin()->first;
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << body;
  if (!f) throw Error("short write to " + path.string());
}

fs::path prepare_out_dir(const RunManifest& m) {
  const fs::path dir = resolve_out_dir(m);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const TraceError& e) {
    err << "trace error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}

// ---- validate ---------------------------------------------------------

struct Check {
  std::string name;
  double measured;
  double expected;
  double tolerance;
  bool relative = false;

  bool pass() const {
    const double delta = std::abs(measured - expected);
    return relative ? delta <= tolerance * std::abs(expected) : delta <= tolerance;
  }
};

std::vector<Check> run_checks(std::uint64_t seed) {
  std::vector<Check> checks;

  {
    const SystemConfig mix = preset("mixtral-8x7b");
    const CacheGeometry g = derive_cache_geometry(mix.model, mix.hardware, 4);
    checks.push_back({"mixtral geometry slots S", double(g.total_slots), 56, 0});
    checks.push_back({"mixtral geometry indexes N (4 ways)", double(g.indexes), 14, 0});
  }

  {
    constexpr int n = 8, M = 4, accesses = 100000;
    const RandomPolicyRates exact = random_policy_hit_rates(n, M);
    const reference::RatePair brute = reference::enumerate_random_policy(n, M);
    checks.push_back({"random-policy n=8 M=4 closed form vs enumeration", exact.at_least_one.value(),
                      brute.at_least_one(), 1e-12});
    ModelSpec one{"probe", 1, n, 2, 1, 0};
    ExpertCache cache({M, M, 1, 1}, one, EvictionPolicy::RandomStatic, derive_seed(seed, 1));
    Rng rng(derive_seed(seed, 2));
    for (int i = 0; i < accesses; ++i) {
      const ExpertId a = static_cast<ExpertId>(rng.below(n));
      ExpertId b;
      do b = static_cast<ExpertId>(rng.below(n));
      while (b == a);
      const ExpertId req[2] = {a, b};
      cache.lookup(0, req);
    }
    const LayerStats& s = cache.stats().layers[0];
    checks.push_back({"random-policy n=8 M=4: sim vs 11/14", double(s.at_least_one_hit) / accesses,
                      exact.at_least_one.value(), 0.01});
    checks.push_back({"random-policy n=8 M=4: sim vs 3/14 (both)", double(s.all_k_hit) / accesses,
                      exact.both.value(), 0.01});
  }

  {
    int mismatches = 0;
    Rng rng(derive_seed(seed, 3));
    for (int i = 0; i < 20; ++i) {
      const int n = 2 + static_cast<int>(rng.below(7));
      const int k = 1 + static_cast<int>(rng.below(std::min(n, 3)));
      const int ways = 1 + static_cast<int>(rng.below(4));
      ModelSpec m{"replay", 1 + static_cast<int>(rng.below(5)), n, k, 1, 0};
      SynthParams p{rng.uniform(), rng.uniform() * 0.5, rng.next(), 1 + static_cast<int>(rng.below(300))};
      const RoutingTrace trace = generate_trace(m, p);
      const int covered = static_cast<int>(rng.below(static_cast<std::uint64_t>(m.num_layers) + 1));
      for (auto policy : {EvictionPolicy::Lru, EvictionPolicy::Fifo}) {
        ExpertCache cache({covered * ways, ways, covered, covered}, m, policy);
        std::uint64_t hits = 0;
        for (int t = 0; t < trace.tokens(); ++t) {
          for (int l = 0; l < m.num_layers; ++l) {
            const LookupResult r = cache.lookup(l, trace.selection(t, l));
            hits += r.hits.size();
            if (!r.covered) continue;
            for (ExpertId e : r.misses) {
              if (auto ticket = cache.request_fetch(l, e)) cache.complete_fetch(*ticket);
            }
          }
        }
        const auto ref = reference::replay_reference(
            trace, covered, ways, policy == EvictionPolicy::Lru ? reference::Replacement::Lru
                                                                : reference::Replacement::Fifo);
        mismatches += hits != ref.expert_hits;
      }
    }
    checks.push_back({"cache replay vs brute-force reference (20 traces x LRU/FIFO), mismatches",
                      double(mismatches), 0, 0});
  }

  {
    const SystemConfig mix = preset("mixtral-8x7b");
    const RoutingTrace trace = generate_trace(mix.model, {0.45, 0.3, derive_seed(seed, 4), 50});
    HardwareSpec tiny = mix.hardware;
    tiny.gpu_memory_bytes = mix.model.resident_bytes;
    const CacheGeometry none = derive_cache_geometry(mix.model, tiny, 4);
    Strategy collab;
    collab.threads = 24;
    Strategy cpu = collab;
    cpu.kind = StrategyKind::CpuOnly;
    const SimResult a = simulate(trace, mix.model, mix.hardware, mix.costs, none, collab, seed);
    const SimResult b = simulate(trace, mix.model, mix.hardware, mix.costs, none, cpu, seed);
    int differing = 0;
    for (std::size_t t = 0; t < a.token_timings.size(); ++t) {
      differing += a.token_timings[t].start_ms != b.token_timings[t].start_ms ||
                   a.token_timings[t].end_ms != b.token_timings[t].end_ms;
    }
    checks.push_back({"S=0 collaborative == CPU_ONLY timings, differing tokens", double(differing), 0, 0});

    CostModel zero = mix.costs;
    zero.t_other_layer_ms = 0.0;
    const SimResult c = simulate(trace, mix.model, mix.hardware, zero, none, cpu, seed);
    checks.push_back({"CPU_ONLY mixtral @24 threads ms/token = 32*(7.34+0.11)",
                      c.token_timings.back().latency_ms(), 32 * (7.34 + 0.11), 0.001, true});
  }

  {
    const SystemConfig mix = preset("mixtral-8x7b");
    const SystemConfig phi = preset("phi3.5-moe");
    checks.push_back({"energy identity: 245.4 W / 4.8 tok/s = 51.1 J/token",
                      energy_per_token(4.8, mix.costs, 24).joules_per_token, 51.1, 0.01, true});
    checks.push_back({"energy identity: 227.5 W / 10.39 tok/s = 21.9 J/token",
                      energy_per_token(10.39, phi.costs, 24).joules_per_token, 21.9, 0.01, true});
  }
  return checks;
}

}  // namespace

SynthParams parse_synth(const std::vector<std::string>& pairs, std::uint64_t seed) {
  SynthParams p;
  p.seed = seed;
  for (const auto& kv : pairs) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--synth expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    try {
      std::size_t used = 0;
      if (key == "p_token_reuse") {
        p.p_token_reuse = std::stod(value, &used);
      } else if (key == "p_layer_follow") {
        p.p_layer_follow = std::stod(value, &used);
      } else if (key == "tokens") {
        p.tokens = std::stoi(value, &used);
      } else {
        throw UsageError("unknown --synth key '" + key + "'");
      }
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception&) {
      throw UsageError("bad --synth value for " + key + ": '" + value + "'");
    }
  }
  p.validate();
  return p;
}

fs::path resolve_out_dir(const RunManifest& m) {
  if (!m.out_dir.empty()) return m.out_dir;
  if (const char* env = std::getenv("MOESIM_OUT_DIR"); env && *env) return env;
  return ".";
}

int cmd_gen_trace(const RunManifest& m, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (m.trace_path) throw UsageError("gen-trace synthesizes a trace; --trace is not accepted");
    const SystemConfig c = load_system(m);
    const SynthParams params = parse_synth(m.synth, m.seed);
    const RoutingTrace trace = generate_trace(c.model, params);
    const fs::path dir = prepare_out_dir(m);
    const fs::path trace_file = dir / (m.gzip ? "trace.jsonl.gz" : "trace.jsonl");
    write_trace(trace, trace_file);

    nlohmann::json side;
    side["schema"] = "moesim.patterns.v1";
    side["model"] = c.model.name;
    side["params"] = {{"p_token_reuse", params.p_token_reuse},
                      {"p_layer_follow", params.p_layer_follow},
                      {"tokens", params.tokens},
                      {"seed", params.seed}};
    if (trace.tokens() >= 2 && trace.num_layers() >= 2) {
      const PatternReport r = analyze_patterns(trace);
      side["consecutive_layer_match_rate"] = r.consecutive_layer_match_rate;
      side["at_least_one_token_reuse_rate_per_layer"] = r.at_least_one_token_reuse_rate_per_layer;
      side["both_token_reuse_rate_per_layer"] = r.both_token_reuse_rate_per_layer;
      side["persistence_2_rate"] = r.persistence_2_rate;
      side["persistence_3plus_rate"] = r.persistence_3plus_rate;
    }
    write_file(dir / "trace.patterns.json", side.dump(2) + "\n");
    out << "wrote " << trace.record_count() << " records to " << trace_file.string() << "\n";
    return int(kOk);
  });
}

int cmd_simulate(const RunManifest& m, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const SystemConfig c = load_system(m);
    if (m.threads.size() > 1 || m.ways.size() > 1) throw UsageError("simulate takes a single --threads and --ways");
    const int threads = m.threads.empty() ? default_threads(c) : m.threads.front();
    const int ways = m.ways.empty() ? 4 : m.ways.front();
    const Strategy strategy = make_strategy(m, threads);
    c.costs.require_threads(threads);
    const RoutingTrace trace = load_trace(m, c.model);

    if (!strategy.uses_cache() && !m.ways.empty()) {
      err << "warning: --ways is ignored for strategy " << to_string(strategy.kind) << "\n";
    }
    const CacheGeometry geometry = derive_cache_geometry(c.model, c.hardware, ways);
    if (strategy.uses_cache() && geometry.empty()) {
      err << "warning: no expert slot fits in GPU memory; every layer runs on the CPU\n";
    }

    SimOptions options;
    options.record_events = m.events;
    const SimResult result = simulate(trace, c.model, c.hardware, c.costs, geometry, strategy,
                                      derive_seed(m.seed, kSimStream), options);

    const fs::path dir = prepare_out_dir(m);
    nlohmann::json summary = summary_json(result, c.costs, m.warmup);
    summary["geometry"] = {{"total_slots", geometry.total_slots},
                           {"ways", geometry.ways},
                           {"indexes", geometry.indexes},
                           {"covered_layers", geometry.covered_layers}};
    summary["config"] = config_to_json(c);
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    write_file(dir / "metrics.csv", csv_header() + "\n" + to_csv(metrics_row(result, c.costs, m.warmup)) + "\n");
    if (m.events) write_file(dir / "events.jsonl", result.events_jsonl());

    out << to_string(strategy.kind) << " " << c.model.name << " threads=" << threads << " S="
        << geometry.total_slots << " N=" << geometry.indexes << " M=" << geometry.ways << ": "
        << summary["tokens_per_second"].get<double>() << " tokens/s\n";
    return int(kOk);
  });
}

int cmd_validate(const RunManifest& m, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    bool ok = true;
    for (const Check& c : run_checks(m.seed)) {
      ok = ok && c.pass();
      char line[512];
      std::snprintf(line, sizeof line, "[%s] %s: measured=%.6g expected=%.6g |delta|=%.3g tol=%s%.3g\n",
                    c.pass() ? "PASS" : "FAIL", c.name.c_str(), c.measured, c.expected,
                    std::abs(c.measured - c.expected), c.relative ? "rel " : "", c.tolerance);
      out << line;
    }
    out << (ok ? "all checks passed\n" : "some checks FAILED\n");
    return int(ok ? kOk : kCheckFailed);
  });
}

int cmd_sweep(const RunManifest& m, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const SystemConfig c = load_system(m);
    std::vector<int> threads = m.threads;
    std::vector<int> ways = m.ways;
    if (threads.empty()) threads = c.hardware.cpu_thread_options;
    if (ways.empty()) ways = {2, 4, 8};
    if (threads.empty() || ways.empty()) throw UsageError("empty sweep grid");
    for (int t : threads) {
      try {
        c.costs.require_threads(t);
      } catch (const ConfigError& e) {
        throw UsageError(std::string("invalid grid thread count: ") + e.what());
      }
    }
    for (int w : ways) {
      if (w < 1) throw UsageError("invalid grid ways value " + std::to_string(w));
    }
    const Strategy base = make_strategy(m, threads.front());
    const RoutingTrace trace = load_trace(m, c.model);
    const fs::path dir = prepare_out_dir(m);
    const fs::path csv_path = dir / "sweep.csv";

    std::vector<MetricsRow> rows;
    if (fs::exists(csv_path)) {
      std::ifstream in(csv_path);
      std::stringstream ss;
      ss << in.rdbuf();
      rows = parse_csv(ss.str());
    }
    std::set<std::string> done;
    for (const auto& r : rows) done.insert(r.key());

    std::vector<GridPoint> todo;
    for (const GridPoint& p : make_grid(threads, ways)) {
      MetricsRow probe;
      probe.model = c.model.name;
      probe.strategy = to_string(base.kind);
      probe.policy = to_string(base.policy);
      probe.miss_execution = to_string(base.miss_execution);
      probe.threads = p.threads;
      probe.ways = base.uses_cache() ? p.ways : 0;  // rows of cacheless runs carry no geometry
      if (!done.contains(probe.key())) todo.push_back(p);
    }
    out << "sweep: " << todo.size() << " point(s) to run, " << (make_grid(threads, ways).size() - todo.size())
        << " already in " << csv_path.string() << "\n";

    const auto results = run_sweep(trace, c, base, todo, derive_seed(m.seed, kSimStream), m.jobs);

    // Rewrite the file with the header, previous rows and new rows in grid order.
    std::string body = csv_header() + "\n";
    for (const auto& r : rows) body += to_csv(r) + "\n";
    bool failed = false;
    for (const auto& point : results) {
      if (!point.result) {
        err << "sweep point threads=" << point.point.threads << " ways=" << point.point.ways
            << " failed: " << point.error << "\n";
        failed = true;
        continue;
      }
      const MetricsRow row = metrics_row(*point.result, c.costs, m.warmup);
      rows.push_back(row);
      body += to_csv(row) + "\n";
      out << "  threads=" << row.threads << " (" << row.indexes << "," << row.ways << "): " << row.tokens_per_second
          << " tokens/s\n";
    }
    write_file(csv_path, body);
    write_file(dir / "sweep.json", series_json(rows).dump(2) + "\n");
    return int(failed ? kCheckFailed : kOk);
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"moesim: trace-driven CPU-GPU MoE expert-cache simulator"};
  app.require_subcommand(1);
  RunManifest m;

  auto add_common = [&m](CLI::App* sub) {
    sub->add_option("--preset", m.preset, "built-in model preset (mixtral-8x7b, phi3.5-moe)");
    sub->add_option("--config", m.config_path, "JSON config file");
    sub->add_option("--t-other-ms", m.t_other_ms, "override attention/router time per layer");
    sub->add_option("--seed", m.seed, "base seed for all randomness");
    sub->add_option("--out", m.out_dir, "output directory (default $MOESIM_OUT_DIR or .)");
  };
  auto add_trace = [&m](CLI::App* sub) {
    sub->add_option("--trace", m.trace_path, "routing trace (JSONL, .gz accepted)");
    sub->add_option("--synth", m.synth, "synthesize: p_token_reuse=.. p_layer_follow=.. tokens=..")
        ->expected(1, -1);
  };
  auto add_strategy = [&m](CLI::App* sub) {
    sub->add_option("--strategy", m.strategy, "collaborative | on-demand | prefetch-ideal | cpu-only");
    sub->add_option("--miss-exec", m.miss_exec, "split | whole");
    sub->add_option("--policy", m.policy, "lru | fifo | random");
    sub->add_option("--threads", m.threads, "CPU thread count(s)")->delimiter(',');
    sub->add_option("--ways", m.ways, "cache ways per index")->delimiter(',');
    sub->add_option("--warmup", m.warmup, "tokens excluded from throughput");
  };

  auto* gen = app.add_subcommand("gen-trace", "write a synthetic routing trace and its pattern report");
  add_common(gen);
  gen->add_option("--synth", m.synth, "p_token_reuse=.. p_layer_follow=.. tokens=..")->expected(1, -1);
  gen->add_option("--trace", m.trace_path, "not accepted; gen-trace writes to --out");
  gen->add_flag("--gzip", m.gzip, "gzip the trace");

  auto* sim = app.add_subcommand("simulate", "run one strategy over a trace");
  add_common(sim);
  add_trace(sim);
  add_strategy(sim);
  sim->add_flag("--events", m.events, "write events.jsonl");

  auto* val = app.add_subcommand("validate", "run the built-in oracle checks");
  val->add_option("--seed", m.seed, "seed for the Monte Carlo checks");

  auto* sweep = app.add_subcommand("sweep", "threads x ways grid to CSV (resumable)");
  add_common(sweep);
  add_trace(sweep);
  add_strategy(sweep);
  sweep->add_option("--jobs", m.jobs, "parallel sweep points (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  if (gen->parsed()) return cmd_gen_trace(m, out, err);
  if (sim->parsed()) return cmd_simulate(m, out, err);
  if (val->parsed()) return cmd_validate(m, out, err);
  if (sweep->parsed()) return cmd_sweep(m, out, err);
  return kUsage;
}

}  // namespace moesim::cli
