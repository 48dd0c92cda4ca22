#include "hotmem/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "hotmem/errors.hpp"
#include "hotmem/rng.hpp"
#include "hotmem/run_log.hpp"

namespace hotmem {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

FunctionSpec preset_function(std::string_view name) {
  struct Row {
    const char* name;
    std::uint32_t weight_milli;
    std::uint64_t memory_mib;
  };
  static constexpr Row kRows[] = {{"Cnn", 500, 384}, {"Bert", 1000, 640}, {"BFS", 500, 384}, {"HTML", 200, 384}};
  for (const Row& r : kRows) {
    if (name == r.name) {
      FunctionSpec f;
      f.name = r.name;
      f.vcpu_weight_milli = r.weight_milli;
      f.memory_limit = MiB(r.memory_mib);
      return f;
    }
  }
  throw ConfigError("no preset function named " + std::string(name));
}

// --- scenario files -------------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

SimDuration ms_to_duration(double ms) { return SimDuration{std::llround(ms * 1e6)}; }
SimDuration seconds_to_duration(double s) { return SimDuration{std::llround(s * 1e9)}; }

Bytes mib(const json& j, const char* key, Bytes fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const double v = get<double>(j, key, 0.0, where);
  if (v < 0) throw ConfigError(std::string(key) + " must be non-negative in " + where);
  return static_cast<Bytes>(std::llround(v * static_cast<double>(MiB(1))));
}

FunctionSpec function_from_json(const json& j, const std::string& vm) {
  const std::string where = "function of VM " + vm;
  check_keys(j,
             {"name", "preset", "vcpu_weight", "memory_limit_mib", "service_ms", "service_samples_ms",
              "service_jitter", "cold_start_ms", "shared_deps_mib", "anon_fraction", "fault_profile", "pin_vcpus",
              "max_concurrency"},
             where);
  FunctionSpec f;
  if (j.contains("preset")) f = preset_function(get<std::string>(j, "preset", "", where));
  f.name = get<std::string>(j, "name", f.name, where);
  if (f.name.empty()) throw ConfigError(where + " has no name");
  if (j.contains("vcpu_weight")) {
    f.vcpu_weight_milli = static_cast<std::uint32_t>(std::llround(get<double>(j, "vcpu_weight", 1.0, where) * 1000));
  }
  f.memory_limit = mib(j, "memory_limit_mib", f.memory_limit, where);
  if (j.contains("service_ms")) f.base_service_time = ms_to_duration(get<double>(j, "service_ms", 0, where));
  if (j.contains("service_samples_ms")) {
    for (double v : get<std::vector<double>>(j, "service_samples_ms", {}, where)) {
      f.service_samples.push_back(ms_to_duration(v));
    }
  }
  f.service_jitter = get<double>(j, "service_jitter", f.service_jitter, where);
  if (j.contains("cold_start_ms")) f.cold_start_overhead = ms_to_duration(get<double>(j, "cold_start_ms", 0, where));
  f.shared_deps_size = mib(j, "shared_deps_mib", f.shared_deps_size, where);
  f.anon_fraction = get<double>(j, "anon_fraction", f.anon_fraction, where);
  if (j.contains("fault_profile")) f.fault_profile = parse_fault_profile(get<std::string>(j, "fault_profile", "", where));
  f.pin_vcpus = get<std::vector<std::uint32_t>>(j, "pin_vcpus", f.pin_vcpus, where);
  f.max_concurrency = get<std::uint32_t>(j, "max_concurrency", f.max_concurrency, where);
  f.validate();
  return f;
}

FreeListPolicy::Kind parse_free_list(const std::string& s) {
  if (s == "global_lifo") return FreeListPolicy::Kind::GlobalLifo;
  if (s == "block_round_robin") return FreeListPolicy::Kind::BlockRoundRobin;
  throw ConfigError("unknown free list policy " + s);
}

VmSpec vm_from_json(const json& j) {
  std::string where = "VM";
  check_keys(j,
             {"name", "backend", "vcpus", "driver_vcpu", "block_size_mib", "page_size_kib", "zero_mode", "free_list",
              "max_blocks_per_request", "functions"},
             where);
  VmSpec vm;
  vm.name = get<std::string>(j, "name", "", where);
  if (vm.name.empty()) throw ConfigError("VM without a name");
  where = "VM " + vm.name;
  vm.backend = parse_backend(get<std::string>(j, "backend", "hotmem", where));
  vm.vcpus = get<std::uint32_t>(j, "vcpus", vm.vcpus, where);
  vm.driver_vcpu = get<std::uint32_t>(j, "driver_vcpu", vm.driver_vcpu, where);
  vm.block_size = mib(j, "block_size_mib", vm.block_size, where);
  if (j.contains("page_size_kib")) vm.page_size = KiB(get<std::uint64_t>(j, "page_size_kib", 4, where));
  vm.zero_mode = parse_zero_mode(get<std::string>(j, "zero_mode", std::string(to_string(vm.zero_mode)), where));
  vm.free_list = parse_free_list(get<std::string>(j, "free_list", "global_lifo", where));
  vm.max_blocks_per_request = get<std::uint32_t>(j, "max_blocks_per_request", 0, where);
  if (!j.contains("functions") || !j.at("functions").is_array()) throw ConfigError(where + " needs a functions array");
  for (const json& f : j.at("functions")) vm.functions.push_back(function_from_json(f, vm.name));
  return vm;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex16(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

Scenario scenario_from_json(const json& input, const std::filesystem::path& base_dir,
                            const ScenarioOverrides& overrides) {
  check_keys(input,
             {"name", "seed", "horizon_s", "audit_every", "fault_batch_pages", "cost_params", "policy", "traces",
              "trace_expansion", "vms"},
             "scenario");
  json j = input;
  if (overrides.seed) j["seed"] = *overrides.seed;
  if (j.contains("vms") && j["vms"].is_array()) {
    for (json& vm : j["vms"]) {
      if (overrides.backend) vm["backend"] = std::string(to_string(*overrides.backend));
      if (overrides.block_size) vm["block_size_mib"] = static_cast<double>(*overrides.block_size) / MiB(1);
    }
  }
  if (!overrides.traces.empty()) {
    j["traces"] = json::array();
    for (const auto& t : overrides.traces) j["traces"].push_back(std::filesystem::absolute(t).string());
  }

  Scenario s;
  s.name = get<std::string>(j, "name", s.name, "scenario");
  s.seed = get<std::uint64_t>(j, "seed", s.seed, "scenario");
  s.horizon = seconds_to_duration(get<double>(j, "horizon_s", 0.0, "scenario"));
  s.audit_every = get<std::uint64_t>(j, "audit_every", 0, "scenario");
  s.fault_batch_pages = get<std::uint32_t>(j, "fault_batch_pages", s.fault_batch_pages, "scenario");
  if (s.fault_batch_pages == 0) throw ConfigError("fault_batch_pages must be positive");

  if (j.contains("cost_params")) {
    const json& c = j.at("cost_params");
    if (c.is_string()) {
      std::filesystem::path p = c.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      s.costs = load_cost_params(p);
    } else {
      try {
        s.costs = c.get<CostParams>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("bad cost_params: ") + e.what());
      }
    }
  }
  j["cost_params"] = s.costs;

  if (j.contains("policy")) {
    const json& p = j.at("policy");
    check_keys(p, {"keepalive_s", "recycle_period_s", "reject_when_saturated"}, "policy");
    if (p.contains("keepalive_s")) s.policy.keepalive = seconds_to_duration(get<double>(p, "keepalive_s", 0, "policy"));
    if (p.contains("recycle_period_s")) {
      s.policy.recycle_period = seconds_to_duration(get<double>(p, "recycle_period_s", 0, "policy"));
    }
    s.policy.reject_when_saturated = get<bool>(p, "reject_when_saturated", false, "policy");
  }

  if (!j.contains("vms") || !j.at("vms").is_array()) throw ConfigError("scenario needs a vms array");
  for (const json& vm : j.at("vms")) s.vms.push_back(vm_from_json(vm));

  const ExpansionRule default_rule =
      parse_expansion_rule(get<std::string>(j, "trace_expansion", "seeded_uniform", "scenario"));
  json digests = json::array();
  if (j.contains("traces")) {
    if (!j.at("traces").is_array()) throw ConfigError("traces must be an array");
    std::uint64_t index = 0;
    for (const json& t : j.at("traces")) {
      ExpansionRule rule = default_rule;
      std::filesystem::path path;
      if (t.is_string()) {
        path = t.get<std::string>();
      } else {
        check_keys(t, {"path", "expansion"}, "trace entry");
        path = get<std::string>(t, "path", "", "trace entry");
        if (t.contains("expansion")) rule = parse_expansion_rule(get<std::string>(t, "expansion", "", "trace entry"));
      }
      if (path.is_relative()) path = base_dir / path;
      if (!std::filesystem::exists(path)) throw ConfigError("trace file " + path.string() + " does not exist");
      const std::vector<TraceEvent> events = ingest_trace(path, mix_seed(s.seed, index++), rule);
      s.trace.insert(s.trace.end(), events.begin(), events.end());
      digests.push_back(hex16(fnv1a64(read_file(path))));
    }
  }
  std::stable_sort(s.trace.begin(), s.trace.end(),
                   [](const TraceEvent& a, const TraceEvent& b) { return a.arrival < b.arrival; });

  // Paths are left out of the hash so a copied tree hashes the same; trace
  // contents are in it instead.
  json canonical = j;
  canonical.erase("traces");
  canonical["trace_digests"] = digests;
  s.hash = fnv1a64(canonical.dump());
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path, const ScenarioOverrides& overrides) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return scenario_from_json(j, std::filesystem::absolute(path).parent_path(), overrides);
}

// --- memhog reclaim ---------------------------------------------------------------

namespace {

SimConfig geometry_config(const Geometry& geo, std::uint64_t seed) {
  SimConfig cfg;
  cfg.page_size = geo.page_size;
  cfg.block_size = geo.block_size;
  cfg.zero_mode = geo.zero_mode;
  cfg.rng_seed = seed;
  cfg.max_memory = geo.block_size;
  return cfg;
}

// Plugs `plugged` bytes into a fresh guest. HotMem partitions are `partition` bytes.
std::unique_ptr<GuestOs> plugged_guest(Backend backend, const Geometry& geo, Bytes plugged, Bytes partition,
                                       std::uint64_t seed) {
  SimConfig cfg = geometry_config(geo, seed);
  if (plugged == 0 || !cfg.block_aligned(plugged)) throw ConfigError("plugged memory must be block-aligned");
  cfg.max_memory = max_memory_for_payload(cfg, plugged);
  std::unique_ptr<GuestOs> guest;
  if (backend == Backend::HotMem) {
    if (partition == 0 || !cfg.block_aligned(partition) || plugged % partition != 0) {
      throw ConfigError("partition size must be block-aligned and divide the plugged memory");
    }
    const auto partitions = static_cast<std::uint32_t>(plugged / partition);
    guest = std::make_unique<HotMemGuest>(build_guest_memory(cfg, hotmem_layout(cfg, partitions, partition, 0)));
  } else {
    FreeListPolicy policy;
    policy.rng_seed = mix_seed(seed, 0x5eed);
    guest = std::make_unique<VanillaGuest>(build_guest_memory(cfg, movable_layout(cfg, 0)), policy, backend);
  }
  guest->plug(static_cast<std::uint32_t>(plugged / cfg.block_size));
  return guest;
}

void fault_pages(GuestOs& guest, ProcessId proc, std::uint64_t pages) {
  for (std::uint64_t i = 0; i < pages; ++i) {
    if (guest.fault(proc, MappingKind::Anonymous, std::nullopt).status != GuestFault::Status::Ok) {
      throw InternalError("memhog fault failed");
    }
  }
}

// Faults `targets[i]` pages for process i, in round-robin batches so that
// concurrent processes interleave on a shared free list.
void interleaved_fill(GuestOs& guest, const std::vector<std::uint64_t>& targets, std::uint64_t batch = 1024) {
  std::vector<std::uint64_t> done(targets.size(), 0);
  for (std::uint32_t p = 0; p < targets.size(); ++p) {
    if (!guest.admit(ProcessId{p})) throw InternalError("memhog process could not be admitted");
  }
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::uint32_t p = 0; p < targets.size(); ++p) {
      const std::uint64_t n = std::min(batch, targets[p] - done[p]);
      if (n == 0) continue;
      fault_pages(guest, ProcessId{p}, n);
      done[p] += n;
      progress = true;
    }
  }
}

}  // namespace

namespace {

std::uint64_t occupied_pages(const ReclaimPoint& point, const Geometry& geo) {
  const std::uint64_t plugged_pages = point.plugged / geo.page_size;
  return static_cast<std::uint64_t>(std::llround(point.usage * static_cast<double>(plugged_pages)));
}

void check_point(const ReclaimPoint& point) {
  if (!(point.usage >= 0.0 && point.usage <= 1.0)) throw ConfigError("usage must be within [0, 1]");
  if (point.size == 0 || point.size > point.plugged) throw ConfigError("reclaim size must be in (0, plugged]");
}

// Process 0 exits, then one unplug of `size` runs on an idle device.
ReclaimOutcome victim_exit_and_unplug(GuestOs& guest, Bytes size, const CostParams& costs) {
  ReclaimOutcome out;
  out.occupied_before = guest.memory().counts().occupied;
  guest.exit(ProcessId{0});
  Hypervisor hyp(guest, costs, 1, VcpuId{0});
  InterferenceState cpu;
  hyp.submit(ResizeKind::Unplug, size, kTimeZero);
  const std::optional<ResizeRequest> started = hyp.start_next(kTimeZero, cpu);
  const ResizeRequest r = hyp.complete(started->completed_at).request;
  out.latency = r.latency();
  out.pages_migrated = r.pages_migrated;
  out.blocks = r.blocks_touched;
  out.blocks_short = r.blocks_short;
  out.driver_busy = r.driver_busy;
  out.failed = r.blocks_short > 0;
  return out;
}

}  // namespace

ReclaimOutcome reclaim_once(const ReclaimPoint& point, const CostParams& costs, const Geometry& geo) {
  check_point(point);
  std::unique_ptr<GuestOs> guest = plugged_guest(point.backend, geo, point.plugged, point.size, point.seed);
  const std::uint64_t size_pages = point.size / geo.page_size;
  const std::uint64_t occupied = occupied_pages(point, geo);
  const std::uint64_t victim = std::min(size_pages, occupied);
  std::uint64_t rest = occupied - victim;

  if (point.backend == Backend::HotMem) {
    // One memhog per partition, so the victim owns partition 0 alone.
    std::vector<std::uint64_t> targets{victim};
    while (rest > 0) {
      const std::uint64_t n = std::min(rest, size_pages);
      targets.push_back(n);
      rest -= n;
    }
    interleaved_fill(*guest, targets);
  } else {
    // The free list is already a random permutation, so fault order does not
    // change the placement distribution. Victim first keeps the background a
    // prefix-extendable sequence (see reclaim_sweep).
    guest->admit(ProcessId{0});
    guest->admit(ProcessId{1});
    fault_pages(*guest, ProcessId{0}, victim);
    fault_pages(*guest, ProcessId{1}, rest);
  }
  return victim_exit_and_unplug(*guest, point.size, costs);
}

SweepOptions microbench_defaults() {
  SweepOptions o;
  o.sizes = {MiB(512), GiB(1), GiB(2), GiB(4), GiB(8)};
  o.usages = {0.5, 0.9};
  o.seeds = {1, 2, 3};
  return o;
}

SweepOptions usage_sweep_defaults() {
  SweepOptions o;
  o.sizes = {GiB(2)};
  o.usages = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  for (std::uint64_t s = 1; s <= 10; ++s) o.seeds.push_back(s);
  return o;
}

std::vector<ReclaimRow> reclaim_sweep(const SweepOptions& opts, const CostParams& costs) {
  std::vector<ReclaimRow> rows;
  for (Backend b : opts.backends) {
    for (Bytes size : opts.sizes) {
      for (double u : opts.usages) {
        for (std::uint64_t seed : opts.seeds) rows.push_back({ReclaimPoint{b, opts.plugged, u, size, seed}, {}});
      }
    }
  }
  std::vector<bool> done(rows.size(), false);

  // Vanilla points that share (size, seed) and a full-size victim reuse one
  // plugged guest: the background grows monotonically and each point unplugs
  // from a copy. Same result as reclaim_once, without refaulting everything.
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ReclaimPoint& p = rows[i].point;
    if (done[i] || p.backend == Backend::HotMem) continue;
    check_point(p);
    const std::uint64_t size_pages = p.size / opts.geometry.page_size;
    std::vector<std::size_t> group;
    for (std::size_t k = i; k < rows.size(); ++k) {
      const ReclaimPoint& q = rows[k].point;
      if (done[k] || q.backend != p.backend || q.size != p.size || q.seed != p.seed) continue;
      check_point(q);
      if (occupied_pages(q, opts.geometry) >= size_pages) group.push_back(k);
    }
    if (group.size() < 2) continue;
    std::stable_sort(group.begin(), group.end(), [&](std::size_t a, std::size_t c) {
      return occupied_pages(rows[a].point, opts.geometry) < occupied_pages(rows[c].point, opts.geometry);
    });
    std::unique_ptr<GuestOs> base = plugged_guest(p.backend, opts.geometry, p.plugged, p.size, p.seed);
    auto& vanilla = dynamic_cast<VanillaGuest&>(*base);
    vanilla.admit(ProcessId{0});
    vanilla.admit(ProcessId{1});
    fault_pages(vanilla, ProcessId{0}, size_pages);
    std::uint64_t background = 0;
    for (std::size_t k : group) {
      const std::uint64_t want = occupied_pages(rows[k].point, opts.geometry) - size_pages;
      fault_pages(vanilla, ProcessId{1}, want - background);
      background = want;
      std::unique_ptr<VanillaGuest> copy = vanilla.clone();
      rows[k].outcome = victim_exit_and_unplug(*copy, p.size, costs);
      done[k] = true;
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!done[i]) rows[i].outcome = reclaim_once(rows[i].point, costs, opts.geometry);
  }
  return rows;
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_reclaim_csv(std::ostream& out, const std::vector<ReclaimRow>& rows, const std::string& provenance) {
  out << provenance << '\n'
      << "backend,size_bytes,plugged_bytes,usage,seed,latency_ms,pages_migrated,blocks,blocks_short,driver_busy_ms,"
         "occupied_pages,failed\n";
  for (const ReclaimRow& r : rows) {
    out << to_string(r.point.backend) << ',' << r.point.size << ',' << r.point.plugged << ',' << fixed(r.point.usage, 4)
        << ',' << r.point.seed << ',' << format_ms(to_ns(r.outcome.latency)) << ',' << r.outcome.pages_migrated << ','
        << r.outcome.blocks << ',' << r.outcome.blocks_short << ',' << format_ms(to_ns(r.outcome.driver_busy)) << ','
        << r.outcome.occupied_before << ',' << (r.outcome.failed ? 1 : 0) << '\n';
  }
}

void write_reclaim_summary_csv(std::ostream& out, const std::vector<ReclaimRow>& rows, const std::string& provenance) {
  struct Acc {
    std::vector<double> latency;
    std::vector<double> migrated;
    std::size_t failed = 0;
  };
  std::map<std::tuple<std::string, Bytes, double>, Acc> groups;
  std::vector<std::tuple<std::string, Bytes, double>> order;
  for (const ReclaimRow& r : rows) {
    const auto key = std::make_tuple(std::string(to_string(r.point.backend)), r.point.size, r.point.usage);
    if (!groups.contains(key)) order.push_back(key);
    Acc& a = groups[key];
    a.latency.push_back(to_ms(r.outcome.latency));
    a.migrated.push_back(static_cast<double>(r.outcome.pages_migrated));
    a.failed += r.outcome.failed ? 1 : 0;
  }
  out << provenance << '\n'
      << "backend,size_bytes,usage,runs,mean_latency_ms,stdev_latency_ms,mean_pages_migrated,failed_runs\n";
  auto mean_sd = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double sq = 0;
    for (double x : v) sq += (x - m) * (x - m);
    return std::make_pair(m, std::sqrt(sq / static_cast<double>(v.size())));
  };
  for (const auto& key : order) {
    const Acc& a = groups[key];
    const auto [lm, ls] = mean_sd(a.latency);
    const auto [mm, _] = mean_sd(a.migrated);
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << fixed(std::get<2>(key), 4) << ',' << a.latency.size()
        << ',' << fixed(lm) << ',' << fixed(ls) << ',' << fixed(mm, 1) << ',' << a.failed << '\n';
  }
}

// --- shrink staircase -------------------------------------------------------------

ShrinkRun shrink_steps(Backend backend, const ShrinkOptions& opts, const CostParams& costs, std::uint64_t seed) {
  if (opts.step == 0 || opts.steps == 0) throw ConfigError("shrink needs a positive step size and count");
  const Bytes total = opts.plugged + opts.floor;
  if (total % opts.step != 0) throw ConfigError("plugged memory must be a whole number of steps");
  if (static_cast<Bytes>(opts.steps) * opts.step > opts.plugged) throw ConfigError("shrink steps exceed plugged memory");
  std::unique_ptr<GuestOs> guest = plugged_guest(backend, opts.geometry, total, opts.step, seed);

  const auto procs = static_cast<std::uint32_t>(total / opts.step);
  interleaved_fill(*guest, std::vector<std::uint64_t>(procs, opts.step / opts.geometry.page_size));

  Hypervisor hyp(*guest, costs, opts.driver_vcpu + 1, VcpuId{opts.driver_vcpu});
  InterferenceState cpu;
  ShrinkRun run;
  run.backend = backend;
  SimTime now = kTimeZero;
  for (std::uint32_t i = 0; i < opts.steps; ++i) {
    guest->exit(ProcessId{i});
    hyp.submit(ResizeKind::Unplug, opts.step, now);
    const std::optional<ResizeRequest> started = hyp.start_next(now, cpu);
    const ResizeRequest r = hyp.complete(started->completed_at).request;
    run.total_busy += r.driver_busy;
    run.steps.push_back({i + 1, r.issued_at, r.completed_at, r.pages_migrated, r.driver_busy, run.total_busy});
    run.finished = r.completed_at;
    now = r.completed_at + opts.gap;
  }

  const std::vector<BusyWindow>& windows = cpu.windows(VcpuId{opts.driver_vcpu});
  const std::int64_t last = (to_ns(run.finished) + 999'999'999) / 1'000'000'000;
  for (std::int64_t s = 0; s <= last; ++s) {
    const SimTime edge = at(SimDuration{(s + 1) * 1'000'000'000});
    SimDuration busy{0};
    for (const BusyWindow& w : windows) {
      if (w.start < edge) busy += std::min(w.end, edge) - w.start;
    }
    run.series.push_back({s, busy});
  }
  return run;
}

void write_shrink_csv(std::ostream& out, const std::vector<ShrinkRun>& runs, const std::string& provenance) {
  out << provenance << '\n' << "backend,step,start_ms,end_ms,pages_migrated,busy_ms,cumulative_busy_ms\n";
  for (const ShrinkRun& r : runs) {
    for (const ShrinkStep& s : r.steps) {
      out << to_string(r.backend) << ',' << s.step << ',' << format_ms(to_ns(s.start)) << ','
          << format_ms(to_ns(s.end)) << ',' << s.pages_migrated << ',' << format_ms(to_ns(s.busy)) << ','
          << format_ms(to_ns(s.cumulative)) << '\n';
    }
  }
}

void write_shrink_series_csv(std::ostream& out, const std::vector<ShrinkRun>& runs, const std::string& provenance) {
  out << provenance << '\n' << "backend,second,cumulative_busy_ms\n";
  for (const ShrinkRun& r : runs) {
    for (const CumulativePoint& p : r.series) {
      out << to_string(r.backend) << ',' << p.second << ',' << format_ms(to_ns(p.busy)) << '\n';
    }
  }
}

// --- runtime experiments -------------------------------------------------------------

std::vector<BackendRun> run_backends(const Scenario& base, const std::vector<Backend>& backends) {
  std::vector<BackendRun> out;
  for (Backend b : backends) {
    Scenario s = base;
    for (VmSpec& vm : s.vms) vm.backend = b;
    s.hash = fnv1a64(hex16(base.hash) + ":" + std::string(to_string(b)));
    out.push_back({b, run(s)});
  }
  return out;
}

namespace {

std::pair<std::uint32_t, std::uint32_t> find_function(const RunLog& log, const std::string& name) {
  for (std::uint32_t v = 0; v < log.vms.size(); ++v) {
    const auto& fns = log.vms[v].functions;
    for (std::uint32_t f = 0; f < fns.size(); ++f) {
      if (fns[f] == name) return {v, f};
    }
  }
  throw ConfigError("run has no function " + name);
}

std::map<std::int64_t, double> series_after(const RunLog& log, const std::string& fn, std::int64_t warmup) {
  const auto [v, f] = find_function(log, fn);
  std::map<std::int64_t, double> out;
  for (const SecondBucket& b : latency_percentiles(log, v, f).series) {
    if (b.second >= warmup) out[b.second] = b.mean_ms;
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

std::vector<double> values(const std::map<std::int64_t, double>& m) {
  std::vector<double> out;
  for (const auto& [_, v] : m) out.push_back(v);
  return out;
}

}  // namespace

InterferenceReport analyze_interference(const RunLog& vanilla, const RunLog& hotmem, const std::string& victim,
                                        const std::string& neighbor, std::int64_t warmup_s) {
  InterferenceReport rep;
  rep.warmup_s = warmup_s;
  const auto vs = series_after(vanilla, victim, warmup_s);
  const auto hs = series_after(hotmem, victim, warmup_s);
  rep.vanilla_median_ms = median(values(vs));
  rep.hotmem_median_ms = median(values(hs));

  const std::uint32_t vm = find_function(vanilla, victim).first;
  std::set<std::int64_t> unplug_seconds;
  for (const ResizeLogEntry& e : vanilla.resizes) {
    if (e.vm != vm || e.request.kind != ResizeKind::Unplug || e.request.blocks_touched == 0) continue;
    const std::int64_t from = to_ns(e.request.issued_at) / 1'000'000'000;
    const std::int64_t to = to_ns(e.request.completed_at) / 1'000'000'000;
    for (std::int64_t s = from; s <= to; ++s) unplug_seconds.insert(s);
  }
  for (const auto& [sec, mean] : vs) {
    if (mean <= 2.0 * rep.vanilla_median_ms) continue;
    rep.vanilla_spike_seconds.push_back(sec);
    for (std::int64_t d = -2; d <= 2; ++d) {
      if (unplug_seconds.contains(sec + d)) {
        rep.aligned_spike_seconds.push_back(sec);
        break;
      }
    }
  }
  for (const auto& [_, mean] : hs) {
    if (rep.hotmem_median_ms > 0) {
      rep.hotmem_max_deviation =
          std::max(rep.hotmem_max_deviation, std::abs(mean - rep.hotmem_median_ms) / rep.hotmem_median_ms);
    }
  }
  const auto vn = series_after(vanilla, neighbor, warmup_s);
  const auto hn = series_after(hotmem, neighbor, warmup_s);
  for (const auto& [sec, h] : hn) {
    auto it = vn.find(sec);
    if (it == vn.end() || h <= 0) {
      rep.html_max_difference = std::max(rep.html_max_difference, 1.0);
      continue;
    }
    rep.html_max_difference = std::max(rep.html_max_difference, std::abs(it->second - h) / h);
  }
  if (vn.size() != hn.size()) rep.html_max_difference = std::max(rep.html_max_difference, 1.0);
  return rep;
}

void write_replay_summary_csv(std::ostream& out, const std::vector<BackendRun>& runs, const std::string& provenance) {
  out << provenance << '\n'
      << "backend,vm,function,ok,failed,cold,p99_ms,mean_ms,cold_plug_mean_ms,unplug_requests,unplugged_bytes,"
         "reclaim_throughput_mib_s\n";
  for (const BackendRun& r : runs) {
    for (std::uint32_t v = 0; v < r.log.vms.size(); ++v) {
      std::uint64_t unplugs = 0;
      Bytes unplugged = 0;
      std::map<std::uint64_t, SimDuration> plug_latency;
      for (const ResizeLogEntry& e : r.log.resizes) {
        if (e.vm != v) continue;
        if (e.request.kind == ResizeKind::Plug) {
          plug_latency[e.request.id] = e.request.latency();
        } else if (e.request.blocks_touched > 0) {
          ++unplugs;
          unplugged += e.request.size_bytes / (e.request.blocks_touched + e.request.blocks_short) *
                       e.request.blocks_touched;
        }
      }
      const std::optional<double> tput = reclaim_throughput(r.log, v);
      for (std::uint32_t f = 0; f < r.log.vms[v].functions.size(); ++f) {
        const FunctionLatency fl = latency_percentiles(r.log, v, f);
        double plug_sum = 0;
        std::size_t plug_n = 0;
        for (const InvocationRecord& inv : r.log.invocations) {
          if (inv.vm != v || inv.function != f || !inv.cold || inv.plug_request == 0) continue;
          if (auto it = plug_latency.find(inv.plug_request); it != plug_latency.end()) {
            plug_sum += to_ms(it->second);
            ++plug_n;
          }
        }
        out << to_string(r.backend) << ',' << r.log.vms[v].name << ',' << fl.function << ',' << fl.ok << ','
            << fl.failed << ',' << fl.cold << ',' << (fl.p99_ms ? fixed(*fl.p99_ms) : "") << ','
            << (fl.mean_ms ? fixed(*fl.mean_ms) : "") << ','
            << (plug_n > 0 ? fixed(plug_sum / static_cast<double>(plug_n)) : "") << ',' << unplugs << ','
            << unplugged << ',' << (tput ? fixed(*tput, 3) : "") << '\n';
      }
    }
  }
}

void write_latency_comparison_csv(std::ostream& out, const std::vector<BackendRun>& runs,
                                  const std::vector<std::string>& functions, const std::string& provenance) {
  out << provenance << '\n' << "backend,function,second,count,mean_latency_ms\n";
  for (const BackendRun& r : runs) {
    for (const std::string& name : functions) {
      const auto [v, f] = find_function(r.log, name);
      for (const SecondBucket& b : latency_percentiles(r.log, v, f).series) {
        out << to_string(r.backend) << ',' << name << ',' << b.second << ',' << b.count << ',' << fixed(b.mean_ms)
            << '\n';
      }
    }
  }
}

// --- calibration ------------------------------------------------------------------

CalibrationReport calibrate(const CalibrationTargets& targets, const CostParams& base) {
  if (targets.seeds.empty()) throw ConfigError("calibration needs at least one seed");
  if (!(targets.reclaim_ratio > 1.0)) throw ConfigError("reclaim ratio target must exceed 1");
  if (!(targets.hotadd_share >= 0.0 && targets.hotadd_share <= 1.0)) throw ConfigError("hotadd share must be in [0, 1]");

  CalibrationReport rep;
  rep.params = base;

  // Bert plug: one partition of 640 MiB, no guest zeroing on the HotMem path.
  const SimConfig cfg = geometry_config(targets.geometry, 1);
  const std::uint64_t bert_blocks = cfg.blocks_for(preset_function("Bert").memory_limit);
  const double per_block = static_cast<double>(to_ns(targets.bert_plug)) / static_cast<double>(bert_blocks);
  rep.params.hotadd_metadata_per_block = SimDuration{std::llround(per_block * targets.hotadd_share)};
  rep.params.online_fixed_per_block =
      SimDuration{std::llround(per_block) - to_ns(rep.params.hotadd_metadata_per_block)};

  CostParams probe = rep.params;
  probe.migrate_per_page = SimDuration{0};
  double vanilla_fixed = 0;
  double hotmem = 0;
  double migrated = 0;
  for (std::uint64_t seed : targets.seeds) {
    ReclaimPoint p = targets.reference;
    p.seed = seed;
    p.backend = Backend::Vanilla;
    const ReclaimOutcome v = reclaim_once(p, probe, targets.geometry);
    p.backend = Backend::HotMem;
    const ReclaimOutcome h = reclaim_once(p, probe, targets.geometry);
    vanilla_fixed += static_cast<double>(to_ns(v.latency));
    hotmem += static_cast<double>(to_ns(h.latency));
    migrated += static_cast<double>(v.pages_migrated);
  }
  const double n = static_cast<double>(targets.seeds.size());
  vanilla_fixed /= n;
  hotmem /= n;
  migrated /= n;
  if (migrated <= 0) throw ConfigError("calibration reference point migrates nothing");
  const double m = (targets.reclaim_ratio * hotmem - vanilla_fixed) / migrated;
  if (m <= 0) throw ConfigError("reclaim ratio target is below the migration-free ratio");
  rep.params.migrate_per_page = SimDuration{std::llround(m)};
  rep.reference_migrations = migrated;
  rep.achieved_ratio = (vanilla_fixed + migrated * static_cast<double>(rep.params.migrate_per_page.count())) / hotmem;
  rep.bert_plug = plug_latency(rep.params, bert_blocks, 0);
  return rep;
}

// --- traces ------------------------------------------------------------------------

std::vector<std::string> replay_trace_rows(const std::string& function, std::uint32_t concurrency,
                                           SimDuration service, std::uint64_t seed) {
  // Share of the concurrency limit kept busy in each minute.
  static constexpr double kShape[] = {0.55, 0.6, 0.6, 0.55, 0.15, 0.15, 0.12, 0.15, 0.15, 0.15};
  Rng rng(seed);
  std::vector<std::string> rows;
  const double per_minute = 60.0 * static_cast<double>(concurrency) / to_seconds(service);
  for (std::size_t m = 0; m < std::size(kShape); ++m) {
    const double noise = 0.95 + 0.1 * uniform_unit(rng);
    const auto count = static_cast<std::uint64_t>(std::llround(per_minute * kShape[m] * noise));
    rows.push_back(function + "," + std::to_string(m) + "," + std::to_string(count));
  }
  return rows;
}

std::vector<TraceEvent> interference_victim_trace(const std::string& function, SimDuration period,
                                                  SimDuration horizon) {
  std::vector<TraceEvent> out;
  for (SimTime t = at(std::chrono::milliseconds(100)); t < at(horizon); t += period) out.push_back({t, function});
  return out;
}

std::vector<TraceEvent> interference_neighbor_trace(const std::string& function, SimDuration horizon) {
  using std::chrono::milliseconds;
  std::vector<TraceEvent> out;
  // Burst that fills the concurrency limit, then a plateau, then a drop.
  for (int i = 0; i < 40; ++i) out.push_back({at(milliseconds(10 * i)), function});
  const SimTime plateau_end = at(std::chrono::seconds(100));
  for (SimTime t = at(std::chrono::seconds(3)); t < plateau_end && t < at(horizon); t += SimDuration{1'000'000'000 / 23}) {
    out.push_back({t, function});
  }
  for (SimTime t = plateau_end; t < at(horizon); t += milliseconds(200)) out.push_back({t, function});
  return out;
}

std::vector<std::filesystem::path> generate_traces(const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  struct Replay {
    const char* file;
    const char* function;
    std::uint32_t concurrency;
    SimDuration service;
  };
  using std::chrono::milliseconds;
  const Replay replays[] = {{"replay_cnn.csv", "Cnn", 20, milliseconds(300)},
                            {"replay_bert.csv", "Bert", 10, milliseconds(400)},
                            {"replay_bfs.csv", "BFS", 20, milliseconds(200)},
                            {"replay_html.csv", "HTML", 50, milliseconds(100)}};
  std::uint64_t salt = 0;
  for (const Replay& r : replays) {
    const std::filesystem::path p = dir / r.file;
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << "# per-minute invocation counts; burst, then a drop to about a quarter\n";
    out << "function,minute,count\n";
    for (const std::string& row : replay_trace_rows(r.function, r.concurrency, r.service, mix_seed(seed, salt++))) {
      out << row << '\n';
    }
    written.push_back(p);
  }
  const SimDuration horizon = std::chrono::seconds(300);
  auto emit = [&](const char* file, const std::vector<TraceEvent>& events) {
    const std::filesystem::path p = dir / file;
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    write_trace(out, events);
    written.push_back(p);
  };
  emit("interference_cnn.csv", interference_victim_trace("Cnn", milliseconds(85), horizon));
  emit("interference_html.csv", interference_neighbor_trace("HTML", horizon));
  return written;
}

}  // namespace hotmem
