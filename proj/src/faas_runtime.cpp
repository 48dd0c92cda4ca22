#include "hotmem/faas_runtime.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hotmem/errors.hpp"
#include "hotmem/rng.hpp"

namespace hotmem {

std::string_view to_string(FaultProfile p) {
  switch (p) {
    case FaultProfile::Eager: return "eager";
    case FaultProfile::Linear: return "linear";
    case FaultProfile::FrontLoaded: return "front_loaded";
    case FaultProfile::Memhog: return "memhog";
  }
  return "?";
}

FaultProfile parse_fault_profile(std::string_view s) {
  if (s == "eager") return FaultProfile::Eager;
  if (s == "linear") return FaultProfile::Linear;
  if (s == "front_loaded" || s == "front-loaded") return FaultProfile::FrontLoaded;
  if (s == "memhog") return FaultProfile::Memhog;
  throw ConfigError("unknown fault profile " + std::string(s));
}

std::string_view to_string(InvocationStatus s) {
  switch (s) {
    case InvocationStatus::Ok: return "ok";
    case InvocationStatus::OomKilled: return "oom_killed";
    case InvocationStatus::AllocationFailed: return "alloc_failed";
    case InvocationStatus::Rejected: return "rejected";
  }
  return "?";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Arrival: return "arrival";
    case EventKind::ServiceDone: return "service_done";
    case EventKind::RecycleTick: return "recycle_tick";
    case EventKind::PlugDone: return "plug_done";
    case EventKind::UnplugDone: return "unplug_done";
    case EventKind::FaultBatch: return "fault_batch";
    case EventKind::InstanceReady: return "instance_ready";
  }
  return "?";
}

void FunctionSpec::validate() const {
  if (name.empty()) throw ConfigError("function without a name");
  if (vcpu_weight_milli == 0) throw ConfigError("function " + name + " has zero vCPU weight");
  if (memory_limit == 0) throw ConfigError("function " + name + " has no memory limit");
  if (base_service_time.count() < 0 || cold_start_overhead.count() < 0) {
    throw ConfigError("function " + name + " has a negative duration");
  }
  if (anon_fraction < 0.0) throw ConfigError("function " + name + " has a negative anonymous fraction");
  if (service_jitter < 0.0 || service_jitter >= 1.0) throw ConfigError("function " + name + " jitter must be in [0, 1)");
  for (SimDuration d : service_samples) {
    if (d.count() < 0) throw ConfigError("function " + name + " has a negative service sample");
  }
}

void RuntimePolicy::validate() const {
  if (keepalive.count() <= 0) throw ConfigError("keepalive must be positive");
  if (recycle_period.count() <= 0) throw ConfigError("recycle period must be positive");
}

std::uint32_t concurrency_for(std::uint32_t vcpus, std::uint32_t weight_milli, std::uint32_t cap) {
  if (weight_milli == 0) throw ConfigError("vCPU weight must be positive");
  const auto n = static_cast<std::uint32_t>(static_cast<std::uint64_t>(vcpus) * 1000 / weight_milli);
  return cap > 0 ? std::min(n, cap) : n;
}

std::uint32_t pinned_vcpu(const std::vector<std::uint32_t>& pins, std::uint32_t slot, std::uint32_t weight_milli) {
  const auto idx = static_cast<std::uint64_t>(slot) * weight_milli / 1000;
  return pins[idx % pins.size()];
}

BootedVm vm_boot(const VmSpec& spec, std::uint64_t seed) {
  if (spec.vcpus == 0) throw ConfigError("VM " + spec.name + " has no vCPUs");
  if (spec.driver_vcpu >= spec.vcpus) throw ConfigError("VM " + spec.name + " driver vCPU out of range");
  if (spec.functions.empty()) throw ConfigError("VM " + spec.name + " runs no functions");

  BootedVm vm;
  SimConfig& cfg = vm.config;
  cfg.page_size = spec.page_size;
  cfg.block_size = spec.block_size;
  cfg.zero_mode = spec.zero_mode;
  cfg.rng_seed = seed;
  cfg.max_memory = spec.block_size;
  if (cfg.page_size == 0 || cfg.block_size % cfg.page_size != 0) throw ConfigError("block size must be a page multiple");

  Bytes instances_bytes = 0;
  Bytes deps = 0;
  std::uint32_t total_n = 0;
  for (const FunctionSpec& f : spec.functions) {
    f.validate();
    for (std::uint32_t v : f.pin_vcpus) {
      if (v >= spec.vcpus) throw ConfigError("function " + f.name + " pinned to a missing vCPU");
    }
    const auto usable = f.pin_vcpus.empty() ? spec.vcpus : static_cast<std::uint32_t>(f.pin_vcpus.size());
    const std::uint32_t n = concurrency_for(usable, f.vcpu_weight_milli, f.max_concurrency);
    if (n == 0) throw ConfigError("function " + f.name + " gets zero concurrency");
    const Bytes part = cfg.blocks_for(f.memory_limit) * cfg.block_size;
    if (spec.backend == Backend::HotMem && vm.partition_size != 0 && part != vm.partition_size) {
      throw ConfigError("HotMem VM " + spec.name + " mixes partition sizes");
    }
    vm.partition_size = part;
    vm.concurrency.push_back(n);
    instances_bytes += static_cast<Bytes>(n) * part;
    deps += f.shared_deps_size;
    total_n += n;
  }
  vm.shared_size = cfg.blocks_for(deps) * cfg.block_size;
  cfg.max_memory = max_memory_for_payload(cfg, vm.shared_size + instances_bytes);

  switch (spec.backend) {
    case Backend::HotMem: {
      const ZoneLayout layout = hotmem_layout(cfg, total_n, vm.partition_size, vm.shared_size);
      vm.guest = std::make_unique<HotMemGuest>(build_guest_memory(cfg, layout));
      break;
    }
    case Backend::Vanilla:
    case Backend::Static: {
      const Bytes populated =
          spec.backend == Backend::Static ? cfg.max_memory - cfg.initial_memory() : vm.shared_size;
      FreeListPolicy policy;
      policy.policy = spec.free_list;
      policy.rng_seed = mix_seed(seed, 0x5eed);
      vm.guest = std::make_unique<VanillaGuest>(build_guest_memory(cfg, movable_layout(cfg, populated)), policy,
                                                spec.backend);
      break;
    }
  }
  return vm;
}

FaasRuntime::FaasRuntime(std::uint32_t vm_index, VmSpec spec, RuntimePolicy policy, CostParams costs,
                         std::uint64_t seed, EventSink& sink, std::uint32_t fault_batch_pages)
    : vm_(vm_index),
      spec_(std::move(spec)),
      policy_(policy),
      seed_(seed),
      sink_(&sink),
      fault_batch_(std::max<std::uint32_t>(1, fault_batch_pages)),
      boot_(vm_boot(spec_, seed)),
      hyp_(*boot_.guest, costs, spec_.vcpus, VcpuId{spec_.driver_vcpu}, spec_.max_blocks_per_request) {
  policy_.validate();
  funcs_.resize(spec_.functions.size());
  for (std::size_t f = 0; f < funcs_.size(); ++f) {
    funcs_[f].slots.assign(boot_.concurrency[f], false);
    if (spec_.functions[f].pin_vcpus.empty()) {
      for (std::uint32_t v = 0; v < spec_.vcpus; ++v) spec_.functions[f].pin_vcpus.push_back(v);
    }
  }
}

SimDuration FaasRuntime::service_time(const FunctionSpec& f, std::uint64_t invocation_id) const {
  Rng rng(mix_seed(seed_, invocation_id));
  if (!f.service_samples.empty()) return f.service_samples[uniform_below(rng, f.service_samples.size())];
  if (f.service_jitter == 0.0) return f.base_service_time;
  const double scale = 1.0 + f.service_jitter * (2.0 * uniform_unit(rng) - 1.0);
  return SimDuration{static_cast<std::int64_t>(std::llround(static_cast<double>(f.base_service_time.count()) * scale))};
}

DispatchDecision FaasRuntime::dispatch(std::uint64_t invocation_id, std::uint32_t function, SimTime now) {
  if (function >= funcs_.size()) throw UsageError("unknown function index " + std::to_string(function));
  InvocationRecord rec;
  rec.id = invocation_id;
  rec.vm = vm_;
  rec.function = function;
  rec.arrival = now;
  const std::size_t idx = invocations_.size();
  invocations_.push_back(rec);

  FunctionState& fs = funcs_[function];
  if (!fs.idle.empty()) {
    const std::uint64_t id = fs.idle.back();
    fs.idle.pop_back();
    start_invocation(instances_[id], idx, now);
    return DispatchDecision::Warm;
  }
  if (fs.live < boot_.concurrency[function]) {
    cold_start(function, idx, now);
    return DispatchDecision::ColdStart;
  }
  if (policy_.reject_when_saturated) {
    invocations_[idx].status = InvocationStatus::Rejected;
    invocations_[idx].start = now;
    invocations_[idx].completion = now;
    ++counters_.rejected;
    return DispatchDecision::Rejected;
  }
  fs.queue.push_back(idx);
  ++counters_.queued_invocations;
  return DispatchDecision::Queued;
}

void FaasRuntime::cold_start(std::uint32_t function, std::size_t inv, SimTime now) {
  FunctionState& fs = funcs_[function];
  const FunctionSpec& f = spec_.functions[function];
  const auto slot = static_cast<std::uint32_t>(std::find(fs.slots.begin(), fs.slots.end(), false) - fs.slots.begin());
  if (slot >= fs.slots.size()) throw InternalError("no free instance slot");
  fs.slots[slot] = true;
  ++fs.live;
  fs.max_live = std::max(fs.max_live, fs.live);

  Instance inst;
  inst.rec.id = instances_.size();
  inst.rec.vm = vm_;
  inst.rec.function = function;
  inst.rec.slot = slot;
  inst.rec.vcpu = pinned_vcpu(f.pin_vcpus, slot, f.vcpu_weight_milli);
  inst.rec.created = now;
  inst.proc = ProcessId{next_proc_++};
  inst.invocation = inv;
  inst.memory_wait_start = now;
  instance_of_proc_[inst.proc.value] = inst.rec.id;
  instances_.push_back(inst);
  ++counters_.cold_starts;
  invocations_[inv].cold = true;
  Instance& me = instances_.back();

  const SimConfig& cfg = boot_.config;
  const auto blocks = static_cast<std::uint32_t>(cfg.blocks_for(f.memory_limit));
  const Backend backend = guest().backend();
  bool ready_now = false;
  std::uint32_t plug_blocks = 0;
  if (backend == Backend::Static) {
    guest().admit(me.proc);
    ready_now = true;
  } else if (backend == Backend::Vanilla) {
    plug_blocks = std::min(blocks, hyp_.plug_headroom_blocks());
    if (plug_blocks < blocks) ++counters_.clamped_plugs;
    ready_now = plug_blocks == 0;
  } else if (guest().admit(me.proc)) {
    ready_now = true;
  } else if (hyp_.plug_headroom_blocks() >= blocks) {
    plug_blocks = blocks;
  } else {
    // Every partition is populated; wait for one to be released.
    ++counters_.clamped_plugs;
  }

  if (plug_blocks > 0) {
    const Bytes bytes = static_cast<Bytes>(plug_blocks) * cfg.block_size;
    me.plug_request = hyp_.submit(ResizeKind::Plug, bytes, now);
    invocations_[inv].plug_request = me.plug_request;
    instance_of_plug_[me.plug_request] = me.rec.id;
    ++counters_.plug_requests;
    counters_.plug_requested_bytes += bytes;
  }
  if (ready_now) begin_init(me, now);
  maybe_start_resize(now);
}

void FaasRuntime::begin_init(Instance& inst, SimTime now) {
  const FunctionSpec& f = spec_.functions[inst.rec.function];
  const SimConfig& cfg = boot_.config;
  inst.state = InstanceState::ColdStarting;
  InvocationRecord& inv = invocations_[*inst.invocation];
  inv.memory_wait = now - inst.memory_wait_start;
  inv.cold_overhead = f.cold_start_overhead;

  inst.anon_target = static_cast<std::uint64_t>(std::floor(f.anon_fraction * static_cast<double>(f.memory_limit) /
                                                           static_cast<double>(cfg.page_size)));
  inst.file_target = f.shared_deps_size / cfg.page_size;
  const std::uint64_t total = inst.anon_target + inst.file_target;
  const auto nb = static_cast<std::uint32_t>((total + fault_batch_ - 1) / fault_batch_);
  inst.batches = nb;
  const SimDuration window = f.cold_start_overhead + f.base_service_time;
  for (std::uint32_t k = 0; k < nb; ++k) {
    SimTime when = now;
    switch (f.fault_profile) {
      case FaultProfile::Eager:
      case FaultProfile::Memhog:
        break;
      case FaultProfile::Linear:
        when = now + window * k / nb;
        break;
      case FaultProfile::FrontLoaded: {
        const std::uint32_t head = (nb + 1) / 2;
        if (k >= head) when = now + window * (k - head + 1) / (nb - head + 1);
        break;
      }
    }
    sink_->schedule(when, EventKind::FaultBatch, vm_, inst.rec.id, 0);
  }
  sink_->schedule(now + f.cold_start_overhead, EventKind::InstanceReady, vm_, inst.rec.id, 0);
}

void FaasRuntime::on_fault_batch(std::uint64_t instance, std::uint64_t, SimTime now) {
  Instance& inst = instances_.at(instance);
  if (inst.state == InstanceState::Destroyed) return;
  const std::uint64_t total = inst.anon_target + inst.file_target;
  const std::uint64_t end = std::min<std::uint64_t>(total, inst.faulted + fault_batch_);
  for (; inst.faulted < end; ++inst.faulted) {
    GuestFault r;
    if (inst.faulted < inst.file_target) {
      const std::uint64_t key = (static_cast<std::uint64_t>(vm_) << 48) |
                                (static_cast<std::uint64_t>(inst.rec.function) << 32) | inst.faulted;
      r = guest().fault(inst.proc, MappingKind::FileBacked, key);
    } else {
      r = guest().fault(inst.proc, MappingKind::Anonymous, std::nullopt);
    }
    if (r.status == GuestFault::Status::OomKilled) {
      fail_instance(inst, InvocationStatus::OomKilled, &r.exit, now);
      return;
    }
    if (r.status == GuestFault::Status::AllocationFailed) {
      fail_instance(inst, InvocationStatus::AllocationFailed, nullptr, now);
      return;
    }
  }
}

void FaasRuntime::on_instance_ready(std::uint64_t instance, std::uint64_t, SimTime now) {
  Instance& inst = instances_.at(instance);
  if (inst.state != InstanceState::ColdStarting) return;
  inst.rec.ready = now;
  start_invocation(inst, *inst.invocation, now);
}

void FaasRuntime::start_invocation(Instance& inst, std::size_t idx, SimTime now) {
  InvocationRecord& inv = invocations_[idx];
  inv.start = now;
  inv.instance = inst.rec.id;
  inv.service = service_time(spec_.functions[inst.rec.function], inv.id);
  inst.invocation = idx;
  inst.state = InstanceState::Busy;
  inst.service_start = now;
  schedule_finish(inst);
}

void FaasRuntime::schedule_finish(Instance& inst) {
  const SimDuration service = invocations_[*inst.invocation].service;
  inst.finish = cpu_.finish_time(VcpuId{inst.rec.vcpu}, inst.service_start, service);
  ++inst.token;
  sink_->schedule(inst.finish, EventKind::ServiceDone, vm_, inst.rec.id, inst.token);
}

void FaasRuntime::restretch(std::uint32_t vcpu) {
  for (Instance& inst : instances_) {
    if (inst.state != InstanceState::Busy || inst.rec.vcpu != vcpu) continue;
    const SimDuration service = invocations_[*inst.invocation].service;
    if (cpu_.finish_time(VcpuId{vcpu}, inst.service_start, service) != inst.finish) schedule_finish(inst);
  }
}

void FaasRuntime::on_service_done(std::uint64_t instance, std::uint64_t token, SimTime now) {
  Instance& inst = instances_.at(instance);
  if (inst.state != InstanceState::Busy || token != inst.token) return;
  InvocationRecord& inv = invocations_[*inst.invocation];
  inv.completion = now;
  inv.stretch = (now - inv.start) - inv.service;
  ++inst.rec.invocations;
  inst.invocation.reset();

  FunctionState& fs = funcs_[inst.rec.function];
  if (!fs.queue.empty()) {
    const std::size_t next = fs.queue.front();
    fs.queue.pop_front();
    invocations_[next].queue_wait = now - invocations_[next].arrival;
    start_invocation(inst, next, now);
    return;
  }
  inst.state = InstanceState::Idle;
  inst.idle_since = now;
  fs.idle.push_back(inst.rec.id);
}

void FaasRuntime::release_slot(Instance& inst) {
  FunctionState& fs = funcs_[inst.rec.function];
  fs.slots[inst.rec.slot] = false;
  --fs.live;
  inst.state = InstanceState::Destroyed;
  instance_of_proc_.erase(inst.proc.value);
}

void FaasRuntime::wake(const Assignment& a, SimTime now) {
  auto it = instance_of_proc_.find(a.proc.value);
  if (it == instance_of_proc_.end()) throw InternalError("woke an unknown process");
  Instance& inst = instances_[it->second];
  if (inst.state != InstanceState::WaitingForMemory) throw InternalError("woke an instance that was not waiting");
  begin_init(inst, now);
}

void FaasRuntime::fail_instance(Instance& inst, InvocationStatus why, const ExitResult* already_exited, SimTime now) {
  ExitResult r = already_exited ? *already_exited : guest().exit(inst.proc);
  ++counters_.killed;
  const bool started = inst.state == InstanceState::Busy;
  if (inst.state == InstanceState::Idle) {
    // Trailing fault batches can outlive a short service time.
    auto& idle = funcs_[inst.rec.function].idle;
    idle.erase(std::find(idle.begin(), idle.end(), inst.rec.id));
  }
  inst.rec.destroyed = now;
  inst.rec.end_reason = why == InvocationStatus::OomKilled ? "oom" : "alloc_fail";
  if (inst.invocation) {
    InvocationRecord& inv = invocations_[*inst.invocation];
    inv.status = why;
    inv.instance = inst.rec.id;
    if (!started) inv.start = now;
    inv.completion = now;
    inst.invocation.reset();
  }
  const std::uint32_t function = inst.rec.function;
  release_slot(inst);
  // `inst` may dangle once wake() or pump_queue() add instances.
  std::uint32_t to_unplug = 0;
  if (r.handed_over) {
    inst.rec.handed_over = true;
    ++counters_.handed_over;
    wake(*r.handed_over, now);
  } else {
    to_unplug = 1;
  }
  if (to_unplug) submit_unplug(to_unplug, function, now);
  pump_queue(function, now);
}

void FaasRuntime::pump_queue(std::uint32_t function, SimTime now) {
  FunctionState& fs = funcs_[function];
  while (!fs.queue.empty() && fs.live < boot_.concurrency[function]) {
    const std::size_t idx = fs.queue.front();
    fs.queue.pop_front();
    invocations_[idx].queue_wait = now - invocations_[idx].arrival;
    cold_start(function, idx, now);
  }
}

RecycleResult FaasRuntime::recycle_idle(SimTime now) {
  RecycleResult out;
  for (std::uint32_t f = 0; f < funcs_.size(); ++f) {
    std::vector<std::uint64_t> destroyed;
    std::vector<std::uint64_t> keep;
    for (std::uint64_t id : funcs_[f].idle) {
      (now - instances_[id].idle_since > policy_.keepalive ? destroyed : keep).push_back(id);
    }
    if (destroyed.empty()) continue;
    funcs_[f].idle = std::move(keep);
    std::uint32_t freed = 0;
    for (std::uint64_t id : destroyed) {
      Instance& inst = instances_[id];
      const ExitResult r = guest().exit(inst.proc);
      inst.rec.destroyed = now;
      inst.rec.end_reason = "recycled";
      inst.rec.idle_at_destroy = now - inst.idle_since;
      release_slot(inst);
      ++counters_.recycled;
      ++out.instances_destroyed;
      if (r.handed_over) {
        instances_[id].rec.handed_over = true;
        ++counters_.handed_over;
        wake(*r.handed_over, now);
      } else {
        ++freed;
      }
    }
    out.unplug_bytes += submit_unplug(freed, f, now);
  }
  return out;
}

Bytes FaasRuntime::submit_unplug(std::uint32_t instances, std::uint32_t function, SimTime now) {
  if (instances == 0 || guest().backend() == Backend::Static) return 0;
  const Bytes bytes =
      static_cast<Bytes>(instances) * boot_.config.blocks_for(spec_.functions[function].memory_limit) *
      boot_.config.block_size;
  hyp_.submit(ResizeKind::Unplug, bytes, now);
  ++counters_.unplug_requests;
  counters_.unplug_requested_bytes += bytes;
  maybe_start_resize(now);
  return bytes;
}

void FaasRuntime::maybe_start_resize(SimTime now) {
  const std::optional<ResizeRequest> r = hyp_.start_next(now, cpu_);
  if (!r) return;
  sink_->schedule(r->completed_at, r->kind == ResizeKind::Plug ? EventKind::PlugDone : EventKind::UnplugDone, vm_, r->id,
                  0);
  if (r->driver_busy.count() > 0) restretch(r->driver_vcpu.value);
}

void FaasRuntime::on_resize_done(SimTime now) {
  Hypervisor::Completion c = hyp_.complete(now);
  if (c.request.kind == ResizeKind::Plug) {
    for (const Assignment& a : c.wakeups) wake(a, now);
    if (guest().backend() != Backend::HotMem) {
      if (auto it = instance_of_plug_.find(c.request.id); it != instance_of_plug_.end()) {
        Instance& inst = instances_[it->second];
        instance_of_plug_.erase(it);
        if (inst.state == InstanceState::WaitingForMemory) begin_init(inst, now);
      }
    }
  }
  maybe_start_resize(now);
}

std::vector<InstanceRecord> FaasRuntime::instance_records() const {
  std::vector<InstanceRecord> out;
  out.reserve(instances_.size());
  for (const Instance& i : instances_) out.push_back(i.rec);
  return out;
}

std::string FaasRuntime::check_invariants() const {
  std::ostringstream err;
  for (std::uint32_t f = 0; f < funcs_.size(); ++f) {
    const FunctionState& fs = funcs_[f];
    std::uint32_t live = 0;
    for (const Instance& i : instances_) {
      if (i.rec.function == f && i.state != InstanceState::Destroyed) ++live;
    }
    if (live != fs.live || live > boot_.concurrency[f]) {
      err << "function " << f << " has " << live << " live instances, counter " << fs.live;
      return err.str();
    }
    std::vector<std::uint64_t> seen = fs.idle;
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) return "idle pool holds an instance twice";
    for (std::uint64_t id : fs.idle) {
      if (instances_[id].state != InstanceState::Idle) {
        err << "instance " << id << " is in the idle pool but not idle";
        return err.str();
      }
    }
    for (const Instance& i : instances_) {
      if (i.rec.function == f && i.state == InstanceState::Idle && !std::binary_search(seen.begin(), seen.end(), i.rec.id)) {
        err << "idle instance " << i.rec.id << " is missing from the pool";
        return err.str();
      }
    }
    if (!fs.queue.empty() && !fs.idle.empty()) return "invocations queue while an instance idles";
  }
  return {};
}

}  // namespace hotmem
