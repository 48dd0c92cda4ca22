#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "hotmem/cost_model.hpp"
#include "hotmem/errors.hpp"
#include "hotmem/rng.hpp"

namespace hotmem {
namespace {

using std::chrono::milliseconds;

TEST(CostModel, PlugFormula) {
  const CostParams p;
  EXPECT_EQ(plug_latency(p, 1, 0), p.hotadd_metadata_per_block + p.online_fixed_per_block);
  EXPECT_EQ(plug_latency(p, 2, 10), 2 * p.plug_fixed_per_block() + 10 * p.zero_per_page);
  EXPECT_THROW(plug_latency(p, 0, 0), UsageError);
}

TEST(CostModel, BertPartitionPlugsInThirtyMilliseconds) {
  EXPECT_EQ(plug_latency(CostParams{}, 5, 0), milliseconds(30));
}

TEST(CostModel, UnplugFormula) {
  const CostParams p;
  const SimDuration fixed = p.offline_fixed_per_block + p.remove_fixed_per_block + p.host_release_per_block;
  EXPECT_EQ(unplug_latency(p, 3, 0, 0), 3 * fixed);
  EXPECT_GT(unplug_latency(p, 3, 1, 0), unplug_latency(p, 3, 0, 0));
  EXPECT_EQ(unplug_latency(p, 0, 0, 0), SimDuration{0});
  EXPECT_EQ(driver_work(p, 7, 3), 7 * p.migrate_per_page + 3 * p.zero_per_page);
}

TEST(CostModel, FormulasAreLinear) {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    CostParams p;
    p.migrate_per_page = SimDuration{static_cast<std::int64_t>(uniform_below(rng, 5000))};
    p.zero_per_page = SimDuration{static_cast<std::int64_t>(uniform_below(rng, 1000))};
    p.hotadd_metadata_per_block = SimDuration{static_cast<std::int64_t>(uniform_below(rng, 10'000'000))};
    p.online_fixed_per_block = SimDuration{static_cast<std::int64_t>(uniform_below(rng, 10'000'000))};
    p.offline_fixed_per_block = SimDuration{static_cast<std::int64_t>(uniform_below(rng, 1'000'000))};
    p.remove_fixed_per_block = SimDuration{static_cast<std::int64_t>(uniform_below(rng, 1'000'000))};
    p.host_release_per_block = SimDuration{static_cast<std::int64_t>(uniform_below(rng, 1'000'000))};
    const std::uint64_t b1 = 1 + uniform_below(rng, 64), b2 = 1 + uniform_below(rng, 64);
    const std::uint64_t m1 = uniform_below(rng, 1 << 20), m2 = uniform_below(rng, 1 << 20);
    const std::uint64_t z1 = uniform_below(rng, 1 << 20), z2 = uniform_below(rng, 1 << 20);
    EXPECT_EQ(unplug_latency(p, b1 + b2, m1 + m2, z1 + z2), unplug_latency(p, b1, m1, z1) + unplug_latency(p, b2, m2, z2));
    EXPECT_EQ(plug_latency(p, b1 + b2, z1 + z2), plug_latency(p, b1, z1) + plug_latency(p, b2, z2));
    const auto expect = static_cast<std::int64_t>(b1) * (p.offline_fixed_per_block + p.remove_fixed_per_block +
                                                         p.host_release_per_block).count() +
                        static_cast<std::int64_t>(m1) * p.migrate_per_page.count() +
                        static_cast<std::int64_t>(z1) * p.zero_per_page.count();
    EXPECT_EQ(unplug_latency(p, b1, m1, z1).count(), expect);
  }
}

TEST(CostModel, JsonRoundTrip) {
  CostParams p;
  p.migrate_per_page = SimDuration{1234};
  p.host_release_per_block = SimDuration{99};
  const nlohmann::json j = p;
  EXPECT_EQ(j.at("migrate_per_page_ns"), 1234);
  EXPECT_EQ(j.get<CostParams>(), p);

  const auto path = std::filesystem::temp_directory_path() / "hotmem_costs_roundtrip.json";
  save_cost_params(path, p);
  EXPECT_EQ(load_cost_params(path), p);
  std::filesystem::remove(path);
}

TEST(CostModel, ParsingRejectsBadInput) {
  EXPECT_THROW(nlohmann::json({{"migrate_per_page_ns", -1}}).get<CostParams>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"migrate_per_page", 1}}).get<CostParams>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"zero_per_page_ns", 1.5}}).get<CostParams>(), ConfigError);
  EXPECT_THROW(nlohmann::json::array().get<CostParams>(), ConfigError);
  EXPECT_THROW(load_cost_params("/nonexistent/costs.json"), ConfigError);
  // Missing keys keep their defaults.
  EXPECT_EQ(nlohmann::json::object().get<CostParams>(), CostParams{});
}

TEST(CostModel, ShippedParamsAreTheDefaults) {
  EXPECT_EQ(load_cost_params(std::filesystem::path(HOTMEM_SOURCE_DIR) / "config" / "cost_params.json"), CostParams{});
}

TEST(Interference, ChargeStretchesWorkOnTheSameVcpu) {
  InterferenceState s;
  const SimTime t0 = at(milliseconds(50));
  s.charge_vcpu(VcpuId{0}, t0, milliseconds(100));
  // Work of 300 ms starting at 0 is preempted by the whole window.
  EXPECT_EQ(s.finish_time(VcpuId{0}, kTimeZero, milliseconds(300)), at(milliseconds(400)));
  EXPECT_EQ(s.finish_time(VcpuId{1}, kTimeZero, milliseconds(300)), at(milliseconds(300)));
  // Work that ends before the window is untouched.
  EXPECT_EQ(s.finish_time(VcpuId{0}, kTimeZero, milliseconds(40)), at(milliseconds(40)));
  EXPECT_EQ(s.overlap(VcpuId{0}, kTimeZero, at(milliseconds(100))), milliseconds(50));
}

TEST(Interference, WindowsQueueBehindEachOther) {
  InterferenceState s;
  s.charge_vcpu(VcpuId{2}, kTimeZero, milliseconds(10));
  const BusyWindow w = s.charge_vcpu(VcpuId{2}, at(milliseconds(5)), milliseconds(10));
  EXPECT_EQ(w.start, at(milliseconds(10)));
  EXPECT_EQ(w.end, at(milliseconds(20)));
  s.charge_vcpu(VcpuId{3}, kTimeZero, SimDuration{0});
  EXPECT_TRUE(s.windows(VcpuId{3}).empty());
  EXPECT_EQ(s.total(VcpuId{2}), milliseconds(20));
  EXPECT_EQ(s.total(), milliseconds(20));
  EXPECT_EQ(s.finish_time(VcpuId{2}, at(milliseconds(5)), milliseconds(10)), at(milliseconds(30)));
}

}  // namespace
}  // namespace hotmem
