#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hotmem/metrics.hpp"
#include "hotmem/sim_engine.hpp"
#include "hotmem/trace.hpp"

namespace hotmem {

std::uint64_t fnv1a64(std::string_view bytes);

/// Preset resource limits (vCPU weight, memory limit) for Cnn, Bert, BFS, HTML.
/// Other fields keep FunctionSpec defaults. Throws ConfigError for other names.
FunctionSpec preset_function(std::string_view name);

struct ScenarioOverrides {
  std::optional<Backend> backend;
  std::optional<std::uint64_t> seed;
  std::optional<Bytes> block_size;
  std::vector<std::filesystem::path> traces;
};

/// Builds a scenario from its JSON form. Relative paths resolve against
/// `base_dir`. The hash covers the config after overrides.
Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                            const ScenarioOverrides& overrides = {});
Scenario load_scenario(const std::filesystem::path& path, const ScenarioOverrides& overrides = {});

/// Geometry shared by the memory-only experiments.
struct Geometry {
  Bytes page_size = KiB(4);
  Bytes block_size = MiB(128);
  ZeroMode zero_mode = ZeroMode::InitOnFree;
};

// --- reclaim microbenchmarks ------------------------------------------------

struct ReclaimPoint {
  Backend backend = Backend::Vanilla;
  Bytes plugged = GiB(64);
  // Occupied fraction of plugged memory before the victim frees its pages.
  double usage = 0.5;
  Bytes size = GiB(2);
  std::uint64_t seed = 1;
};

struct ReclaimOutcome {
  SimDuration latency{0};
  std::uint64_t pages_migrated = 0;
  std::uint32_t blocks = 0;
  std::uint32_t blocks_short = 0;
  std::uint64_t occupied_before = 0;
  SimDuration driver_busy{0};
  // The guest could not give back the whole request.
  bool failed = false;
};

/// Plugs `plugged` bytes, fills them with memhog processes up to `usage`, lets
/// a victim holding `size` bytes (or everything, if less is occupied) exit,
/// then times one unplug of `size`. HotMem partitions are `size` bytes.
ReclaimOutcome reclaim_once(const ReclaimPoint& point, const CostParams& costs, const Geometry& geo = {});

struct ReclaimRow {
  ReclaimPoint point;
  ReclaimOutcome outcome;
};

struct SweepOptions {
  std::vector<Backend> backends{Backend::Vanilla, Backend::HotMem};
  std::vector<Bytes> sizes;
  std::vector<double> usages;
  std::vector<std::uint64_t> seeds;
  Bytes plugged = GiB(64);
  Geometry geometry;
};

SweepOptions microbench_defaults();
SweepOptions usage_sweep_defaults();
std::vector<ReclaimRow> reclaim_sweep(const SweepOptions& opts, const CostParams& costs);
void write_reclaim_csv(std::ostream& out, const std::vector<ReclaimRow>& rows, const std::string& provenance);
/// Mean and population stdev across seeds per (backend, size, usage).
void write_reclaim_summary_csv(std::ostream& out, const std::vector<ReclaimRow>& rows, const std::string& provenance);

// --- shrink staircase -------------------------------------------------------

struct ShrinkOptions {
  Bytes plugged = GiB(16);
  Bytes step = MiB(512);
  // Resident memory that stays plugged after the last step.
  Bytes floor = MiB(512);
  std::uint32_t steps = 32;
  SimDuration gap{std::chrono::seconds(1)};
  std::uint32_t driver_vcpu = 0;
  Geometry geometry;
};

struct ShrinkStep {
  std::uint32_t step = 0;
  SimTime start{};
  SimTime end{};
  std::uint64_t pages_migrated = 0;
  SimDuration busy{0};
  SimDuration cumulative{0};
};

struct ShrinkRun {
  Backend backend = Backend::Vanilla;
  std::vector<ShrinkStep> steps;
  SimTime finished{};
  SimDuration total_busy{0};
  std::vector<CumulativePoint> series;  // per second
};

ShrinkRun shrink_steps(Backend backend, const ShrinkOptions& opts, const CostParams& costs, std::uint64_t seed);
void write_shrink_csv(std::ostream& out, const std::vector<ShrinkRun>& runs, const std::string& provenance);
void write_shrink_series_csv(std::ostream& out, const std::vector<ShrinkRun>& runs, const std::string& provenance);

// --- runtime-driven experiments ----------------------------------------------

struct BackendRun {
  Backend backend = Backend::HotMem;
  RunLog log;
};

/// Runs `base` once per backend, each with every VM switched to that backend.
std::vector<BackendRun> run_backends(const Scenario& base, const std::vector<Backend>& backends);

struct InterferenceReport {
  std::int64_t warmup_s = 10;
  double vanilla_median_ms = 0;
  double hotmem_median_ms = 0;
  std::vector<std::int64_t> vanilla_spike_seconds;  // mean > 2x median
  std::vector<std::int64_t> aligned_spike_seconds;  // spikes next to an unplug
  double hotmem_max_deviation = 0;                  // relative to its median
  double html_max_difference = 0;                   // relative, vanilla vs hotmem
};

/// Per (backend, VM, function): P99, cold starts, and reclaim throughput.
void write_replay_summary_csv(std::ostream& out, const std::vector<BackendRun>& runs, const std::string& provenance);

/// Per-second mean latency of `functions` under each backend.
void write_latency_comparison_csv(std::ostream& out, const std::vector<BackendRun>& runs,
                                  const std::vector<std::string>& functions, const std::string& provenance);

/// `victim` and `neighbor` are function names in the co-located VM.
InterferenceReport analyze_interference(const RunLog& vanilla, const RunLog& hotmem, const std::string& victim,
                                        const std::string& neighbor, std::int64_t warmup_s = 10);

// --- calibration --------------------------------------------------------------

struct CalibrationTargets {
  // Vanilla / HotMem unplug latency at the reference point.
  double reclaim_ratio = 30.0;
  ReclaimPoint reference{Backend::Vanilla, GiB(64), 0.5, GiB(2), 1};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  // Plug latency of one Bert partition.
  SimDuration bert_plug{std::chrono::milliseconds(30)};
  // Share of per-block plug time spent creating page structs (rest is onlining).
  double hotadd_share = 0.75;
  Geometry geometry;
};

struct CalibrationReport {
  CostParams params;
  double reference_migrations = 0;
  double achieved_ratio = 0;
  SimDuration bert_plug{0};
};

/// Fits migrate_per_page to the reclaim ratio and the per-block plug costs to
/// the Bert plug target; the remaining parameters are kept from `base`.
CalibrationReport calibrate(const CalibrationTargets& targets, const CostParams& base);

// --- synthetic traces ----------------------------------------------------------

/// Per-minute (function, minute, count) rows for the trace-replay functions:
/// a burst near full concurrency that later drops to about a quarter.
std::vector<std::string> replay_trace_rows(const std::string& function, std::uint32_t concurrency,
                                           SimDuration service, std::uint64_t seed);
/// Pre-expanded traces for the co-location run.
std::vector<TraceEvent> interference_victim_trace(const std::string& function, SimDuration period, SimDuration horizon);
std::vector<TraceEvent> interference_neighbor_trace(const std::string& function, SimDuration horizon);

/// Writes every bundled trace into `dir`. Returns the files written.
std::vector<std::filesystem::path> generate_traces(const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace hotmem
