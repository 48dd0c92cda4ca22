#include "hotmem/sim_engine.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <sstream>

#include "hotmem/errors.hpp"

namespace hotmem {

void Scenario::validate() const {
  if (vms.empty()) throw ConfigError("scenario " + name + " has no VMs");
  policy.validate();
  costs.validate();
  std::map<std::string, int> seen;
  for (const VmSpec& vm : vms) {
    for (const FunctionSpec& f : vm.functions) {
      if (seen[f.name]++ > 0) throw ConfigError("function " + f.name + " is defined twice");
    }
  }
  for (const TraceEvent& e : trace) {
    if (!seen.contains(e.function)) throw ConfigError("trace names unknown function " + e.function);
    if (e.arrival < kTimeZero) throw ConfigError("trace has a negative timestamp");
  }
  if (horizon.count() < 0) throw ConfigError("negative horizon");
}

namespace {

bool later(const Event& x, const Event& y) {
  if (x.time != y.time) return x.time > y.time;
  return x.seq > y.seq;
}

}  // namespace

void EventQueue::push(SimTime when, EventKind kind, std::uint32_t vm, std::uint64_t a, std::uint64_t b) {
  heap_.push_back(Event{when, next_seq_++, kind, vm, a, b});
  std::push_heap(heap_.begin(), heap_.end(), later);
}

Event EventQueue::pop() {
  std::pop_heap(heap_.begin(), heap_.end(), later);
  Event e = heap_.back();
  heap_.pop_back();
  return e;
}

namespace {

class Engine final : public EventSink {
 public:
  explicit Engine(const Scenario& s) : scenario_(s) {
    s.validate();
    for (std::uint32_t v = 0; v < s.vms.size(); ++v) {
      runtimes_.push_back(std::make_unique<FaasRuntime>(v, s.vms[v], s.policy, s.costs, mix_seed(s.seed, v), *this,
                                                        s.fault_batch_pages));
      for (std::uint32_t f = 0; f < s.vms[v].functions.size(); ++f) {
        where_[s.vms[v].functions[f].name] = {v, f};
      }
    }
  }

  void schedule(SimTime when, EventKind kind, std::uint32_t vm, std::uint64_t a, std::uint64_t b) override {
    if (when < now_) throw InternalError("event scheduled in the past");
    queue_.push(when, kind, vm, a, b);
  }

  RunLog run() {
    std::vector<std::size_t> order(scenario_.trace.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return scenario_.trace[x].arrival < scenario_.trace[y].arrival; });
    SimTime last_arrival{};
    for (std::size_t i : order) {
      const TraceEvent& e = scenario_.trace[i];
      const auto [vm, fn] = where_.at(e.function);
      queue_.push(e.arrival, EventKind::Arrival, vm, fn, 0);
      last_arrival = std::max(last_arrival, e.arrival);
    }
    horizon_ = scenario_.horizon.count() > 0 ? at(scenario_.horizon) : last_arrival;
    if (at(scenario_.policy.recycle_period) <= horizon_) {
      queue_.push(at(scenario_.policy.recycle_period), EventKind::RecycleTick, 0, 0, 0);
    }

    std::uint64_t next_invocation = 0;
    while (!queue_.empty()) {
      const Event e = queue_.pop();
      now_ = e.time;
      FaasRuntime& rt = *runtimes_[e.vm];
      switch (e.kind) {
        case EventKind::Arrival:
          rt.dispatch(next_invocation++, static_cast<std::uint32_t>(e.a), now_);
          break;
        case EventKind::ServiceDone:
          rt.on_service_done(e.a, e.b, now_);
          break;
        case EventKind::InstanceReady:
          rt.on_instance_ready(e.a, e.b, now_);
          break;
        case EventKind::FaultBatch:
          rt.on_fault_batch(e.a, e.b, now_);
          break;
        case EventKind::PlugDone:
        case EventKind::UnplugDone:
          rt.on_resize_done(now_);
          break;
        case EventKind::RecycleTick:
          for (auto& r : runtimes_) r->recycle_idle(now_);
          if (now_ + scenario_.policy.recycle_period <= horizon_) {
            queue_.push(now_ + scenario_.policy.recycle_period, EventKind::RecycleTick, 0, 0, 0);
          }
          break;
      }
      ++events_;
      if (scenario_.audit_every > 0 && events_ % scenario_.audit_every == 0) checkpoint();
    }
    checkpoint();
    return collect();
  }

 private:
  void checkpoint() {
    for (std::uint32_t v = 0; v < runtimes_.size(); ++v) {
      const FaasRuntime& rt = *runtimes_[v];
      AuditCheckpoint c;
      c.event_index = events_;
      c.time = now_;
      c.vm = v;
      const AuditReport rep = audit(rt.guest().memory());
      std::string why = rep.pass ? rt.guest().check_invariants() : rep.first_violation;
      if (why.empty()) why = rt.check_invariants();
      c.pass = why.empty();
      c.violation = why;
      audits_.push_back(c);
      if (!c.pass) {
        std::ostringstream dump;
        dump << "audit failed in VM " << rt.spec().name << " after event " << events_ << " at " << to_ns(now_)
             << " ns: " << why << "; pages unplugged=" << rep.counts.unplugged << " free=" << rep.counts.free
             << " occupied=" << rep.counts.occupied;
        for (std::uint32_t f = 0; f < rt.spec().functions.size(); ++f) {
          dump << "; " << rt.spec().functions[f].name << " live=" << rt.live_instances(f)
               << " idle=" << rt.idle_instances(f) << " queued=" << rt.queued(f);
        }
        throw AuditFailure(dump.str());
      }
    }
  }

  RunLog collect() {
    RunLog log;
    log.scenario = scenario_.name;
    log.scenario_hash = scenario_.hash;
    log.seed = scenario_.seed;
    log.events = events_;
    log.end_time = now_;
    log.audits = std::move(audits_);
    for (std::uint32_t v = 0; v < runtimes_.size(); ++v) {
      const FaasRuntime& rt = *runtimes_[v];
      VmSummary s;
      s.name = rt.spec().name;
      s.backend = rt.guest().backend();
      s.max_memory = rt.guest().memory().config().max_memory;
      s.boot_memory = rt.guest().memory().config().initial_memory();
      s.driver_vcpu = rt.hypervisor().driver_vcpu().value;
      for (std::uint32_t f = 0; f < rt.spec().functions.size(); ++f) {
        s.functions.push_back(rt.spec().functions[f].name);
        s.concurrency.push_back(rt.concurrency(f));
        s.max_live.push_back(rt.max_live(f));
      }
      s.counters = rt.counters();
      s.zeroing = rt.guest().zeroing();
      s.final_resident = rt.hypervisor().host().vm_resident_bytes;
      for (const auto& [t, bytes] : rt.hypervisor().host().released_log) s.released_bytes += bytes;
      log.vms.push_back(std::move(s));

      for (const ResizeRequest& r : rt.hypervisor().log()) log.resizes.push_back({v, r});
      log.invocations.insert(log.invocations.end(), rt.invocations().begin(), rt.invocations().end());
      for (const InstanceRecord& i : rt.instance_records()) log.instances.push_back(i);
      for (std::uint32_t c = 0; c < rt.spec().vcpus; ++c) {
        for (const BusyWindow& w : rt.interference().windows(VcpuId{c})) log.driver_windows.push_back({v, c, w.start, w.end});
      }
    }
    std::stable_sort(log.resizes.begin(), log.resizes.end(), [](const ResizeLogEntry& x, const ResizeLogEntry& y) {
      if (x.request.completed_at != y.request.completed_at) return x.request.completed_at < y.request.completed_at;
      return x.vm < y.vm;
    });
    std::sort(log.invocations.begin(), log.invocations.end(),
              [](const InvocationRecord& x, const InvocationRecord& y) { return x.id < y.id; });
    std::stable_sort(log.driver_windows.begin(), log.driver_windows.end(),
                     [](const DriverWindow& x, const DriverWindow& y) { return x.start < y.start; });
    return log;
  }

  const Scenario& scenario_;
  std::vector<std::unique_ptr<FaasRuntime>> runtimes_;
  std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> where_;
  EventQueue queue_;
  SimTime now_{};
  SimTime horizon_{};
  std::uint64_t events_ = 0;
  std::vector<AuditCheckpoint> audits_;
};

}  // namespace

RunLog run(const Scenario& scenario) {
  Engine engine(scenario);
  return engine.run();
}

}  // namespace hotmem
