#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hotmem/errors.hpp"
#include "hotmem/run_log.hpp"
#include "hotmem/scenarios.hpp"

namespace fs = std::filesystem;
using namespace hotmem;

namespace {

struct Common {
  std::string scenario;
  std::vector<std::string> backends;
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::string out = "out";
  std::string cost_params;
  bool calibrate = false;
  double block_size_mib = 0;
  std::vector<std::string> traces;
};

void add_common(CLI::App* cmd, Common& c, bool scenario_flags) {
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Base seed")->each([&c](const std::string&) { c.seed_set = true; });
  cmd->add_option("--backend", c.backends, "Backend(s): hotmem, vanilla, static");
  cmd->add_option("--cost-params", c.cost_params, "CostParams JSON file");
  cmd->add_flag("--calibrate", c.calibrate, "Fit CostParams before running");
  cmd->add_option("--block-size", c.block_size_mib, "Memory block size in MiB");
  if (scenario_flags) {
    cmd->add_option("--scenario", c.scenario, "Scenario JSON file");
    cmd->add_option("--trace", c.traces, "Trace file(s) replacing the scenario's");
  }
}

CostParams costs_for(const Common& c, const Geometry& geo) {
  CostParams p = c.cost_params.empty() ? CostParams{} : load_cost_params(c.cost_params);
  if (c.calibrate) {
    CalibrationTargets t;
    t.geometry = geo;
    p = calibrate(t, p).params;
  }
  return p;
}

Geometry geometry_for(const Common& c) {
  Geometry g;
  if (c.block_size_mib > 0) g.block_size = static_cast<Bytes>(c.block_size_mib * static_cast<double>(MiB(1)));
  return g;
}

std::vector<Backend> backends_for(const Common& c, std::vector<Backend> fallback) {
  if (c.backends.empty()) return fallback;
  std::vector<Backend> out;
  for (const std::string& b : c.backends) out.push_back(parse_backend(b));
  return out;
}

std::string provenance(const std::string& name, const nlohmann::json& config, std::uint64_t seed) {
  return provenance_line(name, fnv1a64(config.dump()), seed);
}

std::ofstream open_out(const fs::path& dir, const std::string& file) {
  fs::create_directories(dir);
  std::ofstream out(dir / file);
  if (!out) throw ConfigError("cannot write " + (dir / file).string());
  return out;
}

Scenario scenario_for(const Common& c, const std::string& fallback) {
  ScenarioOverrides o;
  if (c.seed_set) o.seed = c.seed;
  if (c.block_size_mib > 0) o.block_size = static_cast<Bytes>(c.block_size_mib * static_cast<double>(MiB(1)));
  for (const std::string& t : c.traces) o.traces.push_back(t);
  const std::string path = c.scenario.empty() ? fallback : c.scenario;
  if (path.empty()) throw UsageError("--scenario is required");
  Scenario s = load_scenario(path, o);
  if (!c.cost_params.empty() || c.calibrate) {
    Geometry g;
    g.block_size = s.vms.front().block_size;
    s.costs = costs_for(c, g);
  }
  return s;
}

nlohmann::json sweep_config(const SweepOptions& o, const CostParams& costs) {
  nlohmann::json j;
  j["costs"] = costs;
  j["plugged"] = o.plugged;
  j["sizes"] = o.sizes;
  j["usages"] = o.usages;
  j["seeds"] = o.seeds;
  j["block_size"] = o.geometry.block_size;
  std::vector<std::string> b;
  for (Backend x : o.backends) b.emplace_back(to_string(x));
  j["backends"] = b;
  return j;
}

int run_sweep(const Common& c, SweepOptions o, const std::string& name) {
  o.geometry = geometry_for(c);
  o.backends = backends_for(c, o.backends);
  if (c.seed_set) {
    for (std::uint64_t& s : o.seeds) s += c.seed - 1;
  }
  const CostParams costs = costs_for(c, o.geometry);
  const std::vector<ReclaimRow> rows = reclaim_sweep(o, costs);
  const std::string prov = provenance(name, sweep_config(o, costs), o.seeds.front());
  auto out = open_out(c.out, name + ".csv");
  write_reclaim_csv(out, rows, prov);
  auto sum = open_out(c.out, name + "_summary.csv");
  write_reclaim_summary_csv(sum, rows, prov);
  std::cout << "wrote " << (fs::path(c.out) / (name + ".csv")).string() << " (" << rows.size() << " runs)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator of microVM memory hot(un)plug"};
  app.require_subcommand(1);
  Common c;

  auto* run_cmd = app.add_subcommand("run", "Run one scenario file and write its RunLog tables");
  add_common(run_cmd, c, true);
  auto* micro = app.add_subcommand("microbench", "Unplug latency per size and backend");
  add_common(micro, c, false);
  auto* sweep = app.add_subcommand("usage-sweep", "2 GiB unplug latency across memory usage");
  add_common(sweep, c, false);
  auto* shrink = app.add_subcommand("shrink-steps", "Stepwise shrink with cumulative driver vCPU time");
  add_common(shrink, c, false);
  auto* replay = app.add_subcommand("trace-replay", "Replay bundled traces under several backends");
  add_common(replay, c, true);
  auto* interf = app.add_subcommand("interference", "Co-location run with pinned driver interrupts");
  add_common(interf, c, true);
  auto* calib = app.add_subcommand("calibrate", "Fit CostParams and write them as JSON");
  add_common(calib, c, false);
  auto* gen = app.add_subcommand("gen-traces", "Write the bundled synthetic traces");
  add_common(gen, c, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      Scenario s = scenario_for(c, "");
      if (!c.backends.empty()) {
        if (c.backends.size() != 1) throw UsageError("run takes a single --backend");
        write_run_log(c.out, run_backends(s, {parse_backend(c.backends.front())}).front().log);
      } else {
        write_run_log(c.out, run(s));
      }
      std::cout << "wrote " << c.out << '\n';
      return 0;
    }
    if (micro->parsed()) return run_sweep(c, microbench_defaults(), "microbench");
    if (sweep->parsed()) return run_sweep(c, usage_sweep_defaults(), "usage_sweep");
    if (shrink->parsed()) {
      ShrinkOptions o;
      o.geometry = geometry_for(c);
      const CostParams costs = costs_for(c, o.geometry);
      std::vector<ShrinkRun> runs;
      for (Backend b : backends_for(c, {Backend::Vanilla, Backend::HotMem})) {
        runs.push_back(shrink_steps(b, o, costs, c.seed));
      }
      nlohmann::json cfg;
      cfg["costs"] = costs;
      cfg["plugged"] = o.plugged;
      cfg["step"] = o.step;
      cfg["steps"] = o.steps;
      cfg["block_size"] = o.geometry.block_size;
      const std::string prov = provenance("shrink_steps", cfg, c.seed);
      auto steps = open_out(c.out, "shrink_steps.csv");
      write_shrink_csv(steps, runs, prov);
      auto series = open_out(c.out, "shrink_vcpu_usage.csv");
      write_shrink_series_csv(series, runs, prov);
      std::cout << "wrote " << c.out << '\n';
      return 0;
    }
    if (replay->parsed() || interf->parsed()) {
      const bool is_replay = replay->parsed();
      const Scenario s = scenario_for(c, "");
      const std::vector<Backend> backends =
          backends_for(c, is_replay ? std::vector<Backend>{Backend::HotMem, Backend::Vanilla, Backend::Static}
                                    : std::vector<Backend>{Backend::Vanilla, Backend::HotMem});
      const std::vector<BackendRun> runs = run_backends(s, backends);
      for (const BackendRun& r : runs) write_run_log(fs::path(c.out) / std::string(to_string(r.backend)), r.log);
      const std::string prov = provenance_line(s.name, s.hash, s.seed);
      std::vector<std::string> fns;
      for (const VmSpec& vm : s.vms) {
        for (const FunctionSpec& f : vm.functions) fns.push_back(f.name);
      }
      auto summary = open_out(c.out, "replay_summary.csv");
      write_replay_summary_csv(summary, runs, prov);
      auto series = open_out(c.out, "latency_per_second.csv");
      write_latency_comparison_csv(series, runs, fns, prov);
      std::cout << "wrote " << c.out << '\n';
      return 0;
    }
    if (calib->parsed()) {
      CalibrationTargets t;
      t.geometry = geometry_for(c);
      const CostParams base = c.cost_params.empty() ? CostParams{} : load_cost_params(c.cost_params);
      const CalibrationReport rep = calibrate(t, base);
      fs::create_directories(c.out);
      save_cost_params(fs::path(c.out) / "cost_params.json", rep.params);
      std::printf("migrate_per_page_ns=%lld reference_migrations=%.1f ratio=%.3f bert_plug_ms=%.3f\n",
                  static_cast<long long>(rep.params.migrate_per_page.count()), rep.reference_migrations,
                  rep.achieved_ratio, to_ms(rep.bert_plug));
      return 0;
    }
    if (gen->parsed()) {
      for (const fs::path& p : generate_traces(c.out, c.seed)) std::cout << "wrote " << p.string() << '\n';
      return 0;
    }
  } catch (const AuditFailure& e) {
    std::cerr << "audit failure: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
