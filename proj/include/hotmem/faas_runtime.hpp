#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hotmem/cost_model.hpp"
#include "hotmem/guest_os.hpp"
#include "hotmem/hotplug_proto.hpp"

namespace hotmem {

enum class FaultProfile { Eager, Linear, FrontLoaded, Memhog };
std::string_view to_string(FaultProfile p);
FaultProfile parse_fault_profile(std::string_view s);

struct FunctionSpec {
  std::string name;
  // Thousandths of a vCPU, so 0.2 vCPU is exactly 200.
  std::uint32_t vcpu_weight_milli = 1000;
  Bytes memory_limit = MiB(384);
  SimDuration base_service_time{std::chrono::milliseconds(100)};
  // Empirical service times; when set, each invocation draws one by seed.
  std::vector<SimDuration> service_samples;
  // Uniform spread of +-jitter around base_service_time (0 = constant).
  double service_jitter = 0.0;
  SimDuration cold_start_overhead{std::chrono::milliseconds(250)};
  Bytes shared_deps_size = MiB(64);
  double anon_fraction = 0.8;
  FaultProfile fault_profile = FaultProfile::Linear;
  // vCPUs the instances are pinned to; empty means every vCPU of the VM.
  std::vector<std::uint32_t> pin_vcpus;
  // Cap on top of the vCPU-derived concurrency; 0 means no extra cap.
  std::uint32_t max_concurrency = 0;

  void validate() const;
};

struct RuntimePolicy {
  SimDuration keepalive{std::chrono::seconds(120)};
  SimDuration recycle_period{std::chrono::seconds(1)};
  // At full concurrency: reject new invocations instead of queueing them.
  bool reject_when_saturated = false;

  void validate() const;
};

struct VmSpec {
  std::string name;
  Backend backend = Backend::HotMem;
  std::uint32_t vcpus = 10;
  std::uint32_t driver_vcpu = 0;
  std::vector<FunctionSpec> functions;
  Bytes page_size = KiB(4);
  Bytes block_size = MiB(128);
  ZeroMode zero_mode = ZeroMode::InitOnFree;
  FreeListPolicy::Kind free_list = FreeListPolicy::Kind::GlobalLifo;
  std::uint32_t max_blocks_per_request = 0;
};

/// floor(vcpus / weight) capped by `cap` when non-zero.
std::uint32_t concurrency_for(std::uint32_t vcpus, std::uint32_t weight_milli, std::uint32_t cap);

/// vCPU of the instance in `slot`: instances fill pinned vCPUs in order, as
/// many per vCPU as its weight allows.
std::uint32_t pinned_vcpu(const std::vector<std::uint32_t>& pins, std::uint32_t slot, std::uint32_t weight_milli);

struct BootedVm {
  std::unique_ptr<GuestOs> guest;
  std::vector<std::uint32_t> concurrency;  // per function
  Bytes partition_size = 0;                // per-instance plug size
  Bytes shared_size = 0;
  SimConfig config;
};

/// Sizes and builds the guest for a VM spec. Concurrency is computed over the
/// function's pinned vCPUs when it has any, otherwise over all of them. HotMem gets one private
/// partition per possible instance plus a populated shared partition; Vanilla
/// starts with only the shared-dependency room online; Static is fully online.
BootedVm vm_boot(const VmSpec& spec, std::uint64_t seed);

enum class InvocationStatus { Ok, OomKilled, AllocationFailed, Rejected };
std::string_view to_string(InvocationStatus s);

struct InvocationRecord {
  std::uint64_t id = 0;
  std::uint32_t vm = 0;
  std::uint32_t function = 0;
  SimTime arrival{};
  SimTime start{};  // service start
  SimTime completion{};
  InvocationStatus status = InvocationStatus::Ok;
  bool cold = false;
  std::uint64_t instance = 0;
  std::uint64_t plug_request = 0;  // 0 when the cold start plugged nothing
  SimDuration queue_wait{0};
  SimDuration memory_wait{0};
  SimDuration cold_overhead{0};
  SimDuration service{0};
  SimDuration stretch{0};

  SimDuration latency() const { return completion - arrival; }
};

enum class InstanceState { WaitingForMemory, ColdStarting, Busy, Idle, Destroyed };

struct InstanceRecord {
  std::uint64_t id = 0;
  std::uint32_t vm = 0;
  std::uint32_t function = 0;
  std::uint32_t slot = 0;
  std::uint32_t vcpu = 0;
  SimTime created{};
  SimTime ready{};
  std::optional<SimTime> destroyed;
  std::string end_reason;  // recycled / oom / alloc_fail
  // Idle time at destruction for recycled instances.
  SimDuration idle_at_destroy{0};
  bool handed_over = false;
  std::uint64_t invocations = 0;
};

enum class DispatchDecision { Warm, ColdStart, Queued, Rejected };

struct RecycleResult {
  std::uint32_t instances_destroyed = 0;
  Bytes unplug_bytes = 0;
};

/// Counters the coupling invariants are stated over.
struct RuntimeCounters {
  std::uint64_t cold_starts = 0;
  std::uint64_t plug_requests = 0;
  Bytes plug_requested_bytes = 0;
  std::uint64_t clamped_plugs = 0;
  std::uint64_t recycled = 0;
  std::uint64_t killed = 0;
  std::uint64_t handed_over = 0;
  std::uint64_t unplug_requests = 0;
  Bytes unplug_requested_bytes = 0;
  std::uint64_t queued_invocations = 0;
  std::uint64_t rejected = 0;
};

enum class EventKind { Arrival, ServiceDone, RecycleTick, PlugDone, UnplugDone, FaultBatch, InstanceReady };
std::string_view to_string(EventKind k);

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void schedule(SimTime when, EventKind kind, std::uint32_t vm, std::uint64_t a, std::uint64_t b) = 0;
};

/// Per-VM control plane: warm/cold dispatch, keep-alive recycling, and the
/// resize requests that go with scaling up and down.
class FaasRuntime {
 public:
  FaasRuntime(std::uint32_t vm_index, VmSpec spec, RuntimePolicy policy, CostParams costs, std::uint64_t seed,
              EventSink& sink, std::uint32_t fault_batch_pages = 1024);

  DispatchDecision dispatch(std::uint64_t invocation_id, std::uint32_t function, SimTime now);
  RecycleResult recycle_idle(SimTime now);

  void on_resize_done(SimTime now);
  void on_instance_ready(std::uint64_t instance, std::uint64_t token, SimTime now);
  void on_service_done(std::uint64_t instance, std::uint64_t token, SimTime now);
  void on_fault_batch(std::uint64_t instance, std::uint64_t token_and_batch, SimTime now);

  const VmSpec& spec() const { return spec_; }
  std::uint32_t concurrency(std::uint32_t function) const { return boot_.concurrency.at(function); }
  Bytes partition_size() const { return boot_.partition_size; }
  GuestOs& guest() { return *boot_.guest; }
  const GuestOs& guest() const { return *boot_.guest; }
  const Hypervisor& hypervisor() const { return hyp_; }
  const InterferenceState& interference() const { return cpu_; }
  const std::vector<InvocationRecord>& invocations() const { return invocations_; }
  std::vector<InstanceRecord> instance_records() const;
  const RuntimeCounters& counters() const { return counters_; }
  std::uint32_t live_instances(std::uint32_t function) const { return funcs_.at(function).live; }
  std::uint32_t max_live(std::uint32_t function) const { return funcs_.at(function).max_live; }
  std::uint32_t idle_instances(std::uint32_t function) const {
    return static_cast<std::uint32_t>(funcs_.at(function).idle.size());
  }
  std::size_t queued(std::uint32_t function) const { return funcs_.at(function).queue.size(); }

  /// Runtime-level invariants (pool discipline, admission). Empty when they hold.
  std::string check_invariants() const;

 private:
  struct Instance {
    InstanceRecord rec;
    InstanceState state = InstanceState::WaitingForMemory;
    ProcessId proc;
    std::uint64_t token = 0;  // bumps whenever pending events go stale
    std::optional<std::size_t> invocation;  // index into invocations_
    SimTime idle_since{};
    SimTime service_start{};
    SimTime memory_wait_start{};
    SimTime finish{};
    std::uint64_t plug_request = 0;
    std::uint64_t anon_target = 0;
    std::uint64_t file_target = 0;
    std::uint64_t faulted = 0;
    std::uint32_t batches = 0;
  };
  struct FunctionState {
    std::uint32_t live = 0;
    std::uint32_t max_live = 0;
    std::vector<bool> slots;
    std::vector<std::uint64_t> idle;  // LIFO, back is next
    std::deque<std::size_t> queue;    // invocation indices
  };

  void cold_start(std::uint32_t function, std::size_t inv, SimTime now);
  void begin_init(Instance& inst, SimTime now);
  void start_invocation(Instance& inst, std::size_t inv, SimTime now);
  void schedule_finish(Instance& inst);
  void fail_instance(Instance& inst, InvocationStatus why, const ExitResult* already_exited, SimTime now);
  void release_slot(Instance& inst);
  void maybe_start_resize(SimTime now);
  void restretch(std::uint32_t vcpu);
  void pump_queue(std::uint32_t function, SimTime now);
  Bytes submit_unplug(std::uint32_t instances, std::uint32_t function, SimTime now);
  void wake(const Assignment& a, SimTime now);
  SimDuration service_time(const FunctionSpec& f, std::uint64_t invocation_id) const;

  std::uint32_t vm_;
  VmSpec spec_;
  RuntimePolicy policy_;
  std::uint64_t seed_;
  EventSink* sink_;
  std::uint32_t fault_batch_;
  BootedVm boot_;
  InterferenceState cpu_;
  Hypervisor hyp_;
  std::vector<Instance> instances_;
  std::vector<FunctionState> funcs_;
  std::vector<InvocationRecord> invocations_;
  std::unordered_map<std::uint32_t, std::uint64_t> instance_of_proc_;
  std::unordered_map<std::uint64_t, std::uint64_t> instance_of_plug_;
  std::uint32_t next_proc_ = 0;
  RuntimeCounters counters_;
};

}  // namespace hotmem
