#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hotmem/errors.hpp"
#include "hotmem/faas_runtime.hpp"

namespace hotmem {

struct TraceEvent {
  SimTime arrival{};
  std::string function;

  bool operator==(const TraceEvent&) const = default;
};

struct Scenario {
  std::string name = "scenario";
  std::vector<VmSpec> vms;
  RuntimePolicy policy;
  CostParams costs;
  std::vector<TraceEvent> trace;
  std::uint64_t seed = 1;
  // Recycle ticks stop here; events already in flight still drain. Zero
  // means the last arrival.
  SimDuration horizon{0};
  // Full audit every this many events (0: only at the end).
  std::uint64_t audit_every = 0;
  std::uint32_t fault_batch_pages = 1024;
  // Identifies the config the scenario came from; copied into the RunLog.
  std::uint64_t hash = 0;

  void validate() const;
};

struct Event {
  SimTime time{};
  std::uint64_t seq = 0;
  EventKind kind = EventKind::Arrival;
  std::uint32_t vm = 0;
  std::uint64_t a = 0;
  std::uint64_t b = 0;
};

/// (time, seq) min-heap; seq is assigned on push and strictly increases.
class EventQueue {
 public:
  void push(SimTime when, EventKind kind, std::uint32_t vm, std::uint64_t a, std::uint64_t b);
  Event pop();
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  std::vector<Event> heap_;
  std::uint64_t next_seq_ = 0;
};

struct ResizeLogEntry {
  std::uint32_t vm = 0;
  ResizeRequest request;
};

struct DriverWindow {
  std::uint32_t vm = 0;
  std::uint32_t vcpu = 0;
  SimTime start{};
  SimTime end{};
};

struct AuditCheckpoint {
  std::uint64_t event_index = 0;
  SimTime time{};
  std::uint32_t vm = 0;
  bool pass = true;
  std::string violation;
};

struct VmSummary {
  std::string name;
  Backend backend = Backend::HotMem;
  Bytes max_memory = 0;
  Bytes boot_memory = 0;
  std::uint32_t driver_vcpu = 0;
  std::vector<std::string> functions;
  std::vector<std::uint32_t> concurrency;
  std::vector<std::uint32_t> max_live;
  RuntimeCounters counters;
  ZeroingWork zeroing;
  Bytes final_resident = 0;
  Bytes released_bytes = 0;
};

/// Everything a run produced. Sorted so it is a pure function of the scenario.
struct RunLog {
  std::string scenario;
  std::uint64_t scenario_hash = 0;
  std::uint64_t seed = 0;
  std::vector<VmSummary> vms;
  std::vector<ResizeLogEntry> resizes;
  std::vector<InvocationRecord> invocations;
  std::vector<InstanceRecord> instances;
  std::vector<DriverWindow> driver_windows;
  std::vector<AuditCheckpoint> audits;
  std::uint64_t events = 0;
  SimTime end_time{};
};

class AuditFailure : public InternalError {
 public:
  using InternalError::InternalError;
};

/// Runs the scenario to completion. Throws AuditFailure with a state dump if
/// any checkpoint fails.
RunLog run(const Scenario& scenario);

}  // namespace hotmem
