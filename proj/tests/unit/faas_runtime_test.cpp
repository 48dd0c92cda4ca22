#include <gtest/gtest.h>

#include "hotmem/errors.hpp"
#include "hotmem/faas_runtime.hpp"
#include "hotmem/rng.hpp"
#include "hotmem/scenarios.hpp"
#include "support.hpp"

namespace hotmem {
namespace {

using std::chrono::milliseconds;
using std::chrono::seconds;
using testing::Loop;
using testing::ms;
using testing::simple_function;

VmSpec one_function_vm(Backend b, FunctionSpec f) {
  VmSpec vm;
  vm.name = "vm";
  vm.backend = b;
  vm.functions.push_back(std::move(f));
  return vm;
}

RuntimePolicy keepalive(SimDuration k) {
  RuntimePolicy p;
  p.keepalive = k;
  return p;
}

TEST(FaasRuntime, ConcurrencyFollowsVcpuWeight) {
  EXPECT_EQ(concurrency_for(10, preset_function("Cnn").vcpu_weight_milli, 0), 20u);
  EXPECT_EQ(concurrency_for(10, preset_function("Bert").vcpu_weight_milli, 0), 10u);
  EXPECT_EQ(concurrency_for(10, preset_function("BFS").vcpu_weight_milli, 0), 20u);
  EXPECT_EQ(concurrency_for(10, preset_function("HTML").vcpu_weight_milli, 0), 50u);
  EXPECT_EQ(concurrency_for(2, 500, 0), 4u);
  EXPECT_EQ(concurrency_for(8, 200, 0), 40u);
  EXPECT_EQ(concurrency_for(8, 200, 7), 7u);
  EXPECT_EQ(concurrency_for(1, 300, 0), 3u);
  EXPECT_THROW(concurrency_for(1, 0, 0), ConfigError);

  const std::vector<std::uint32_t> pins{2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(pinned_vcpu(pins, 0, 200), 2u);
  EXPECT_EQ(pinned_vcpu(pins, 4, 200), 2u);
  EXPECT_EQ(pinned_vcpu(pins, 5, 200), 3u);
  EXPECT_EQ(pinned_vcpu(pins, 39, 200), 9u);
  EXPECT_EQ(pinned_vcpu({0, 1}, 3, 500), 1u);
}

TEST(FaasRuntime, PinnedFunctionsAreSizedOverTheirPins) {
  FunctionSpec cnn = preset_function("Cnn");
  cnn.pin_vcpus = {0, 1};
  FunctionSpec html = preset_function("HTML");
  html.pin_vcpus = {2, 3, 4, 5, 6, 7, 8, 9};
  VmSpec vm;
  vm.name = "colo";
  vm.functions = {cnn, html};
  const BootedVm b = vm_boot(vm, 1);
  EXPECT_EQ(b.concurrency, (std::vector<std::uint32_t>{4, 40}));
  EXPECT_EQ(b.partition_size, MiB(384));
  EXPECT_EQ(b.guest->unplugged_blocks(), 44u * 3);

  vm.functions[0].pin_vcpus = {10};
  EXPECT_THROW(vm_boot(vm, 1), ConfigError);
}

TEST(FaasRuntime, BootLayoutPerBackend) {
  for (Backend backend : {Backend::HotMem, Backend::Vanilla, Backend::Static}) {
    const BootedVm b = vm_boot(one_function_vm(backend, preset_function("Cnn")), 3);
    SCOPED_TRACE(std::string(to_string(backend)));
    EXPECT_EQ(b.concurrency, std::vector<std::uint32_t>{20});
    EXPECT_EQ(b.shared_size, MiB(128));
    EXPECT_EQ(b.guest->backend(), backend);
    EXPECT_EQ(b.guest->unplugged_blocks(), backend == Backend::Static ? 0u : 60u);
    EXPECT_TRUE(audit(b.guest->memory()).pass);
    EXPECT_EQ(b.guest->granule_blocks(), backend == Backend::HotMem ? 3u : 1u);
  }
  VmSpec mixed = one_function_vm(Backend::HotMem, preset_function("Cnn"));
  mixed.functions.push_back(preset_function("Bert"));
  EXPECT_THROW(vm_boot(mixed, 1), ConfigError);
  EXPECT_NO_THROW(vm_boot((mixed.backend = Backend::Vanilla, mixed), 1));
}

TEST(FaasRuntime, ColdThenWarm) {
  Loop loop;
  FaasRuntime rt(0, one_function_vm(Backend::HotMem, simple_function("f")), {}, CostParams{}, 1, loop);
  EXPECT_EQ(rt.dispatch(0, 0, kTimeZero), DispatchDecision::ColdStart);
  loop.drain(rt);
  EXPECT_EQ(rt.dispatch(1, 0, ms(1000)), DispatchDecision::Warm);
  loop.drain(rt);
  const auto& inv = rt.invocations();
  ASSERT_EQ(inv.size(), 2u);
  EXPECT_TRUE(inv[0].cold);
  EXPECT_EQ(inv[0].memory_wait, milliseconds(18));
  EXPECT_EQ(inv[0].completion, ms(318));
  EXPECT_FALSE(inv[1].cold);
  EXPECT_EQ(inv[1].latency(), milliseconds(100));
  EXPECT_EQ(inv[1].instance, inv[0].instance);
  EXPECT_EQ(rt.counters().cold_starts, 1u);
  EXPECT_EQ(rt.counters().plug_requests, 1u);
  EXPECT_EQ(rt.check_invariants(), "");
  EXPECT_THROW(rt.dispatch(2, 1, ms(2000)), UsageError);
}

TEST(FaasRuntime, SaturatedFunctionQueuesInArrivalOrder) {
  FunctionSpec f = simple_function("f");
  f.max_concurrency = 1;
  Loop loop;
  FaasRuntime rt(0, one_function_vm(Backend::HotMem, f), {}, CostParams{}, 1, loop);
  EXPECT_EQ(rt.dispatch(0, 0, kTimeZero), DispatchDecision::ColdStart);
  EXPECT_EQ(rt.dispatch(1, 0, ms(1)), DispatchDecision::Queued);
  EXPECT_EQ(rt.dispatch(2, 0, ms(2)), DispatchDecision::Queued);
  EXPECT_EQ(rt.queued(0), 2u);
  loop.drain(rt);
  const auto& inv = rt.invocations();
  EXPECT_EQ(inv[1].completion, ms(418));
  EXPECT_EQ(inv[1].queue_wait, milliseconds(317));
  EXPECT_EQ(inv[2].completion, ms(518));
  EXPECT_EQ(rt.max_live(0), 1u);
  EXPECT_EQ(rt.counters().queued_invocations, 2u);

  RuntimePolicy reject;
  reject.reject_when_saturated = true;
  Loop loop2;
  FaasRuntime rt2(0, one_function_vm(Backend::HotMem, f), reject, CostParams{}, 1, loop2);
  rt2.dispatch(0, 0, kTimeZero);
  EXPECT_EQ(rt2.dispatch(1, 0, ms(5)), DispatchDecision::Rejected);
  EXPECT_EQ(rt2.invocations()[1].status, InvocationStatus::Rejected);
  EXPECT_EQ(rt2.counters().rejected, 1u);
}

TEST(FaasRuntime, KeepaliveIsExclusive) {
  Loop loop;
  FaasRuntime rt(0, one_function_vm(Backend::HotMem, simple_function("f")), keepalive(seconds(10)), CostParams{}, 1,
                 loop);
  rt.dispatch(0, 0, kTimeZero);
  loop.drain(rt);
  const SimTime idle = rt.invocations()[0].completion;
  EXPECT_EQ(rt.recycle_idle(idle + seconds(10)).instances_destroyed, 0u);
  const RecycleResult r = rt.recycle_idle(idle + seconds(10) + SimDuration{1});
  EXPECT_EQ(r.instances_destroyed, 1u);
  EXPECT_EQ(r.unplug_bytes, MiB(384));
  loop.drain(rt);
  const auto recs = rt.instance_records();
  EXPECT_EQ(recs[0].end_reason, "recycled");
  EXPECT_EQ(recs[0].idle_at_destroy, seconds(10) + SimDuration{1});
  EXPECT_EQ(rt.guest().unplugged_blocks(), 30u);
}

TEST(FaasRuntime, BurstIsReclaimedByOneUnplug) {
  FunctionSpec html = preset_function("HTML");
  html.cold_start_overhead = milliseconds(200);
  html.base_service_time = milliseconds(100);
  html.shared_deps_size = MiB(4);
  Loop loop;
  FaasRuntime rt(0, one_function_vm(Backend::HotMem, html), keepalive(seconds(10)), CostParams{}, 1, loop);
  for (std::uint64_t i = 0; i < 17; ++i) EXPECT_EQ(rt.dispatch(i, 0, kTimeZero), DispatchDecision::ColdStart);
  loop.drain(rt);
  EXPECT_EQ(rt.invocations().back().completion, ms(17 * 18 + 300));
  const std::uint32_t before = rt.guest().unplugged_blocks();
  for (int s = 1; s <= 10; ++s) EXPECT_EQ(rt.recycle_idle(at(seconds(s))).instances_destroyed, 0u);
  const RecycleResult r = rt.recycle_idle(at(seconds(11)));
  EXPECT_EQ(r.instances_destroyed, 17u);
  EXPECT_EQ(r.unplug_bytes, 17 * MiB(384));
  EXPECT_EQ(rt.counters().unplug_requests, 1u);
  loop.drain(rt);
  EXPECT_EQ(rt.guest().unplugged_blocks(), before + 17 * 3);
}

TEST(FaasRuntime, RecycledPartitionGoesToAWaitingInstance) {
  FunctionSpec a = simple_function("a");
  FunctionSpec b = simple_function("b");
  a.max_concurrency = b.max_concurrency = 1;
  VmSpec vm = one_function_vm(Backend::HotMem, a);
  vm.functions.push_back(b);
  Loop loop;
  FaasRuntime rt(0, vm, keepalive(seconds(2)), CostParams{}, 1, loop);
  rt.dispatch(0, 0, kTimeZero);
  loop.drain(rt);
  // b cannot attach: a idles on the only populated partition, so b waits and a plug starts.
  EXPECT_EQ(rt.dispatch(1, 1, ms(2995)), DispatchDecision::ColdStart);
  loop.drain(rt, ms(2999));
  const RecycleResult r = rt.recycle_idle(ms(3000));
  EXPECT_EQ(r.instances_destroyed, 1u);
  EXPECT_EQ(r.unplug_bytes, 0u);
  EXPECT_EQ(rt.counters().handed_over, 1u);
  EXPECT_EQ(rt.counters().unplug_requests, 0u);
  loop.drain(rt);
  const auto& inv = rt.invocations();
  EXPECT_EQ(inv[1].memory_wait, milliseconds(5));
  EXPECT_EQ(inv[1].completion, ms(3300));
  EXPECT_TRUE(rt.instance_records()[0].handed_over);
  EXPECT_EQ(rt.check_invariants(), "");
}

TEST(FaasRuntime, EagerColdStartFaultsTheWholeFootprint) {
  FunctionSpec f = preset_function("Cnn");
  f.fault_profile = FaultProfile::Eager;
  f.shared_deps_size = MiB(4);
  Loop loop;
  FaasRuntime rt(0, one_function_vm(Backend::HotMem, f), {}, CostParams{}, 1, loop);
  const std::uint64_t base = rt.guest().memory().counts().occupied;
  rt.dispatch(0, 0, kTimeZero);
  loop.drain(rt, ms(18));
  EXPECT_EQ(rt.guest().memory().counts().occupied - base, 78'643u + 1024u);
  rt.dispatch(1, 0, ms(19));
  loop.drain(rt, ms(37));
  // The shared dependencies are already resident.
  EXPECT_EQ(rt.guest().memory().counts().occupied - base, 2 * 78'643u + 1024u);
  loop.drain(rt);
  EXPECT_TRUE(audit(rt.guest().memory()).pass);
}

void random_workload(Backend backend, std::uint64_t seed) {
  SCOPED_TRACE(std::string(to_string(backend)) + " seed " + std::to_string(seed));
  FunctionSpec a = simple_function("a");
  FunctionSpec b = simple_function("b");
  a.max_concurrency = 3;
  b.max_concurrency = 2;
  b.fault_profile = FaultProfile::FrontLoaded;
  b.service_jitter = 0.3;
  a.memory_limit = b.memory_limit = MiB(256);
  a.pin_vcpus = {0};  // shares the driver vCPU
  VmSpec vm = one_function_vm(backend, a);
  vm.functions.push_back(b);
  RuntimePolicy p = keepalive(seconds(2));
  Loop loop;
  FaasRuntime rt(0, vm, p, CostParams{}, seed, loop, 2048);
  Rng rng(seed);
  SimTime t{};
  SimTime next_tick = at(seconds(1));
  for (std::uint64_t i = 0; i < 120; ++i) {
    t += SimDuration{static_cast<std::int64_t>(uniform_below(rng, 400'000'000))};
    while (next_tick <= t) {
      loop.drain(rt, next_tick);
      rt.recycle_idle(next_tick);
      next_tick += seconds(1);
    }
    loop.drain(rt, t);
    rt.dispatch(i, static_cast<std::uint32_t>(uniform_below(rng, 2)), t);
    ASSERT_EQ(rt.check_invariants(), "");
  }
  loop.drain(rt);
  for (int k = 0; k < 5; ++k) {
    rt.recycle_idle(loop.now + seconds(3 + k));
    loop.drain(rt);
  }
  ASSERT_EQ(rt.check_invariants(), "");
  ASSERT_TRUE(audit(rt.guest().memory()).pass);
  EXPECT_EQ(rt.guest().check_invariants(), "");

  std::uint64_t cold = 0;
  for (const InvocationRecord& r : rt.invocations()) {
    ASSERT_EQ(r.status, InvocationStatus::Ok) << r.id;
    EXPECT_EQ(r.latency(), r.queue_wait + r.memory_wait + r.cold_overhead + r.service + r.stretch) << r.id;
    EXPECT_GE(r.stretch, SimDuration{0});
    if (!r.cold) {
      EXPECT_EQ(r.memory_wait, SimDuration{0});
      EXPECT_EQ(r.cold_overhead, SimDuration{0});
    }
    cold += r.cold;
  }
  const RuntimeCounters& c = rt.counters();
  EXPECT_EQ(c.cold_starts, cold);
  std::uint64_t recycled = 0;
  for (const InstanceRecord& r : rt.instance_records()) recycled += r.end_reason == "recycled";
  EXPECT_EQ(c.recycled, recycled);
  EXPECT_EQ(c.recycled + c.killed, c.cold_starts);  // everything was torn down at the end
  if (backend == Backend::HotMem) {
    EXPECT_EQ(c.plug_requested_bytes, c.plug_requests * MiB(256));
    EXPECT_EQ(c.unplug_requested_bytes + c.handed_over * MiB(256), (c.recycled + c.killed) * MiB(256));
  }
  EXPECT_EQ(rt.live_instances(0) + rt.live_instances(1), 0u);
}

TEST(FaasRuntime, InstanceKilledWhileIdleLeavesTheIdlePool) {
  FunctionSpec f = simple_function("f");
  f.fault_profile = FaultProfile::Linear;
  f.service_samples = {milliseconds(10)};  // idle long before the last fault batch
  Loop loop;
  FaasRuntime rt(0, one_function_vm(Backend::Static, f), {}, CostParams{}, 1, loop);
  // A stranger leaves room for 85% of the anonymous footprint.
  const ProcessId hog{1u << 30};
  std::uint64_t free_pages = 0;
  while (rt.guest().fault(hog, MappingKind::Anonymous, std::nullopt).status == GuestFault::Status::Ok) ++free_pages;
  rt.guest().exit(hog);
  const auto anon = static_cast<std::uint64_t>(f.anon_fraction * static_cast<double>(f.memory_limit / KiB(4)));
  for (std::uint64_t i = 0; i + anon * 85 / 100 < free_pages; ++i) rt.guest().fault(hog, MappingKind::Anonymous, std::nullopt);

  EXPECT_EQ(rt.dispatch(0, 0, kTimeZero), DispatchDecision::ColdStart);
  loop.drain(rt);
  const InstanceRecord i = rt.instance_records().at(0);
  ASSERT_TRUE(i.destroyed.has_value());
  EXPECT_EQ(i.end_reason, "alloc_fail");
  EXPECT_EQ(rt.invocations()[0].status, InvocationStatus::Ok);
  EXPECT_GT(*i.destroyed, rt.invocations()[0].completion);
  EXPECT_EQ(rt.idle_instances(0), 0u);
  EXPECT_EQ(rt.live_instances(0), 0u);
  EXPECT_EQ(rt.check_invariants(), "");
  rt.guest().exit(hog);
  EXPECT_EQ(rt.dispatch(1, 0, ms(1000)), DispatchDecision::ColdStart);
  loop.drain(rt);
  EXPECT_EQ(rt.check_invariants(), "");
  EXPECT_EQ(rt.counters().cold_starts, 2u);
}

TEST(FaasRuntime, RandomWorkloadsKeepLatencyAccounting) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    random_workload(Backend::HotMem, seed);
    random_workload(Backend::Vanilla, seed);
    random_workload(Backend::Static, seed);
  }
}

}  // namespace
}  // namespace hotmem
