#include "hotmem/run_log.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "hotmem/errors.hpp"
#include "hotmem/metrics.hpp"

namespace hotmem {

std::string format_ms(std::int64_t ns) {
  const bool neg = ns < 0;
  const std::uint64_t mag = neg ? static_cast<std::uint64_t>(-(ns + 1)) + 1 : static_cast<std::uint64_t>(ns);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%llu.%06llu", neg ? "-" : "", static_cast<unsigned long long>(mag / 1'000'000),
                static_cast<unsigned long long>(mag % 1'000'000));
  return buf;
}

std::string provenance_line(const std::string& scenario, std::uint64_t hash, std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return "# scenario=" + scenario + " hash=" + buf + " seed=" + std::to_string(seed);
}

namespace {

std::string ms(SimTime t) { return format_ms(to_ns(t)); }
std::string ms(SimDuration d) { return format_ms(to_ns(d)); }

void header(std::ostream& out, const RunLog& log, const char* columns) {
  out << provenance_line(log.scenario, log.scenario_hash, log.seed) << '\n' << columns << '\n';
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_resize_csv(std::ostream& out, const RunLog& log) {
  header(out, log,
         "vm,request_id,kind,size_bytes,blocks_touched,blocks_short,pages_migrated,pages_zeroed,queued_ms,issued_ms,"
         "completed_ms,latency_ms,driver_vcpu,driver_busy_ms");
  for (const ResizeLogEntry& e : log.resizes) {
    const ResizeRequest& r = e.request;
    out << log.vms[e.vm].name << ',' << r.id << ',' << to_string(r.kind) << ',' << r.size_bytes << ','
        << r.blocks_touched << ',' << r.blocks_short << ',' << r.pages_migrated << ',' << r.pages_zeroed << ','
        << ms(r.queued_at) << ',' << ms(r.issued_at) << ',' << ms(r.completed_at) << ',' << ms(r.latency()) << ','
        << r.driver_vcpu.value << ',' << ms(r.driver_busy) << '\n';
  }
}

void write_invocations_csv(std::ostream& out, const RunLog& log) {
  header(out, log,
         "id,vm,function,arrival_ms,start_ms,completion_ms,latency_ms,status,cold,instance,plug_request,"
         "queue_wait_ms,memory_wait_ms,cold_overhead_ms,service_ms,stretch_ms");
  for (const InvocationRecord& r : log.invocations) {
    out << r.id << ',' << log.vms[r.vm].name << ',' << log.vms[r.vm].functions[r.function] << ',' << ms(r.arrival)
        << ',' << ms(r.start) << ',' << ms(r.completion) << ',' << ms(r.latency()) << ',' << to_string(r.status) << ','
        << (r.cold ? 1 : 0) << ',' << r.instance << ',' << r.plug_request << ',' << ms(r.queue_wait) << ','
        << ms(r.memory_wait) << ',' << ms(r.cold_overhead) << ',' << ms(r.service) << ',' << ms(r.stretch) << '\n';
  }
}

void write_instances_csv(std::ostream& out, const RunLog& log) {
  header(out, log,
         "vm,function,instance,slot,vcpu,created_ms,ready_ms,destroyed_ms,end_reason,idle_at_destroy_ms,handed_over,"
         "invocations");
  for (const InstanceRecord& i : log.instances) {
    out << log.vms[i.vm].name << ',' << log.vms[i.vm].functions[i.function] << ',' << i.id << ',' << i.slot << ','
        << i.vcpu << ',' << ms(i.created) << ',' << ms(i.ready) << ',' << (i.destroyed ? ms(*i.destroyed) : "") << ','
        << i.end_reason << ',' << ms(i.idle_at_destroy) << ',' << (i.handed_over ? 1 : 0) << ',' << i.invocations
        << '\n';
  }
}

void write_driver_busy_csv(std::ostream& out, const RunLog& log) {
  header(out, log, "vm,vcpu,start_ms,end_ms,busy_ms");
  for (const DriverWindow& w : log.driver_windows) {
    out << log.vms[w.vm].name << ',' << w.vcpu << ',' << ms(w.start) << ',' << ms(w.end) << ',' << ms(w.end - w.start)
        << '\n';
  }
}

void write_latency_series_csv(std::ostream& out, const RunLog& log) {
  header(out, log, "vm,function,second,count,mean_latency_ms");
  for (std::uint32_t v = 0; v < log.vms.size(); ++v) {
    for (std::uint32_t f = 0; f < log.vms[v].functions.size(); ++f) {
      const FunctionLatency fl = latency_percentiles(log, v, f);
      for (const SecondBucket& b : fl.series) {
        out << fl.vm << ',' << fl.function << ',' << b.second << ',' << b.count << ',' << fixed(b.mean_ms) << '\n';
      }
    }
  }
}

void write_vcpu_usage_csv(std::ostream& out, const RunLog& log) {
  header(out, log, "vm,vcpu,second,cumulative_busy_ms");
  const std::int64_t last = to_ns(log.end_time) / 1'000'000'000;
  for (std::uint32_t v = 0; v < log.vms.size(); ++v) {
    const std::uint32_t vcpu = log.vms[v].driver_vcpu;
    for (const CumulativePoint& p : vcpu_cumulative_usage(log, v, vcpu, last)) {
      out << log.vms[v].name << ',' << vcpu << ',' << p.second << ',' << ms(p.busy) << '\n';
    }
  }
}

nlohmann::json summary_json(const RunLog& log) {
  using nlohmann::json;
  json j;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(log.scenario_hash));
  j["scenario"] = log.scenario;
  j["hash"] = hash;
  j["seed"] = log.seed;
  j["events"] = log.events;
  j["end_ms"] = format_ms(to_ns(log.end_time));
  j["audits"] = log.audits.size();
  j["percentile_method"] = "nearest_rank";
  json vms = json::array();
  for (std::uint32_t v = 0; v < log.vms.size(); ++v) {
    const VmSummary& s = log.vms[v];
    json vm;
    vm["name"] = s.name;
    vm["backend"] = std::string(to_string(s.backend));
    vm["max_memory_bytes"] = s.max_memory;
    vm["boot_memory_bytes"] = s.boot_memory;
    vm["driver_vcpu"] = s.driver_vcpu;
    vm["final_resident_bytes"] = s.final_resident;
    vm["released_bytes"] = s.released_bytes;
    const RuntimeCounters& c = s.counters;
    vm["counters"] = {{"cold_starts", c.cold_starts},
                      {"plug_requests", c.plug_requests},
                      {"plug_requested_bytes", c.plug_requested_bytes},
                      {"clamped_plugs", c.clamped_plugs},
                      {"recycled", c.recycled},
                      {"killed", c.killed},
                      {"handed_over", c.handed_over},
                      {"unplug_requests", c.unplug_requests},
                      {"unplug_requested_bytes", c.unplug_requested_bytes},
                      {"queued_invocations", c.queued_invocations},
                      {"rejected", c.rejected}};
    vm["zeroed_pages"] = {{"on_fault", s.zeroing.on_fault},
                          {"on_free", s.zeroing.on_free},
                          {"on_online", s.zeroing.on_online},
                          {"on_offline", s.zeroing.on_offline}};
    std::uint64_t migrated = 0;
    for (const ResizeLogEntry& e : log.resizes) {
      if (e.vm == v) migrated += e.request.pages_migrated;
    }
    vm["pages_migrated"] = migrated;
    if (auto t = reclaim_throughput(log, v)) {
      vm["reclaim_throughput_mib_s"] = fixed(*t, 3);
    } else {
      vm["reclaim_throughput_mib_s"] = nullptr;
    }
    json fns = json::array();
    for (std::uint32_t f = 0; f < s.functions.size(); ++f) {
      const FunctionLatency fl = latency_percentiles(log, v, f);
      json fj;
      fj["name"] = s.functions[f];
      fj["concurrency"] = s.concurrency[f];
      fj["max_live"] = s.max_live[f];
      fj["ok"] = fl.ok;
      fj["failed"] = fl.failed;
      fj["failure_rate"] = fl.ok + fl.failed == 0
                               ? std::string("0.000000")
                               : fixed(static_cast<double>(fl.failed) / static_cast<double>(fl.ok + fl.failed));
      fj["cold"] = fl.cold;
      fj["p99_ms"] = fl.p99_ms ? json(fixed(*fl.p99_ms)) : json(nullptr);
      fj["mean_ms"] = fl.mean_ms ? json(fixed(*fl.mean_ms)) : json(nullptr);
      fns.push_back(fj);
    }
    vm["functions"] = fns;
    vms.push_back(vm);
  }
  j["vms"] = vms;
  return j;
}

void write_run_log(const std::filesystem::path& dir, const RunLog& log) {
  std::filesystem::create_directories(dir);
  auto emit = [&](const char* name, void (*fn)(std::ostream&, const RunLog&)) {
    std::ofstream out(dir / name);
    if (!out) throw ConfigError("cannot write " + (dir / name).string());
    fn(out, log);
  };
  emit("resize_events.csv", write_resize_csv);
  emit("invocations.csv", write_invocations_csv);
  emit("instances.csv", write_instances_csv);
  emit("driver_busy.csv", write_driver_busy_csv);
  emit("latency_series.csv", write_latency_series_csv);
  emit("vcpu_usage.csv", write_vcpu_usage_csv);
  std::ofstream out(dir / "summary.json");
  out << summary_json(log).dump(2) << '\n';
}

}  // namespace hotmem
