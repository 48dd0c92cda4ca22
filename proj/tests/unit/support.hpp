#pragma once

#include <memory>

#include "hotmem/faas_runtime.hpp"
#include "hotmem/guest_memory.hpp"
#include "hotmem/sim_engine.hpp"

namespace hotmem::testing {

// Tiny geometry: 4 KiB pages, `ppb` pages per block, `blocks` blocks in total.
inline SimConfig tiny_config(std::uint32_t ppb, std::uint32_t blocks, ZeroMode zm = ZeroMode::InitOnFree) {
  SimConfig c;
  c.page_size = KiB(4);
  c.block_size = c.page_size * ppb;
  c.max_memory = c.block_size * blocks;
  c.zero_mode = zm;
  return c;
}

/// A HotMem guest with `partitions` private partitions of `per` blocks and a
/// populated shared zone of `shared` blocks; `populated` partitions start online.
inline GuestMemory tiny_hotmem(std::uint32_t ppb, std::uint32_t partitions, std::uint32_t per, std::uint32_t shared,
                               std::uint32_t populated = 0) {
  SimConfig c = tiny_config(ppb, 1);
  c.max_memory = max_memory_for_payload(c, c.block_size * (partitions * per + shared));
  ZoneLayout layout = hotmem_layout(c, partitions, c.block_size * per, c.block_size * shared);
  for (ZoneSpec& z : layout.zones) {
    if (z.kind == ZoneKind::HotMemPrivate && populated > 0) {
      z.populated_blocks = z.block_count;
      --populated;
    }
  }
  return build_guest_memory(c, layout);
}

/// Runs a FaasRuntime on its own, without the scenario engine.
class Loop final : public EventSink {
 public:
  void schedule(SimTime when, EventKind kind, std::uint32_t vm, std::uint64_t a, std::uint64_t b) override {
    q.push(when, kind, vm, a, b);
  }

  // Delivers events up to and including `until`.
  void drain(FaasRuntime& rt, SimTime until = SimTime::max()) {
    while (!q.empty()) {
      Event e = q.pop();
      if (e.time > until) {
        q.push(e.time, e.kind, e.vm, e.a, e.b);
        return;
      }
      now = e.time;
      switch (e.kind) {
        case EventKind::ServiceDone: rt.on_service_done(e.a, e.b, now); break;
        case EventKind::InstanceReady: rt.on_instance_ready(e.a, e.b, now); break;
        case EventKind::FaultBatch: rt.on_fault_batch(e.a, e.b, now); break;
        case EventKind::PlugDone:
        case EventKind::UnplugDone: rt.on_resize_done(now); break;
        default: break;
      }
    }
  }

  EventQueue q;
  SimTime now{};
};

inline FunctionSpec simple_function(std::string name, Bytes limit = MiB(384)) {
  FunctionSpec f;
  f.name = std::move(name);
  f.memory_limit = limit;
  f.vcpu_weight_milli = 1000;
  f.base_service_time = std::chrono::milliseconds(100);
  f.cold_start_overhead = std::chrono::milliseconds(200);
  f.shared_deps_size = MiB(4);
  return f;
}

inline SimTime ms(std::int64_t v) { return at(std::chrono::milliseconds(v)); }

}  // namespace hotmem::testing
