#include <gtest/gtest.h>

#include "hotmem/errors.hpp"
#include "hotmem/guest_memory.hpp"
#include "hotmem/rng.hpp"
#include "support.hpp"

namespace hotmem {
namespace {

using testing::tiny_config;

TEST(MemModel, BootMemoryFor16GiB) {
  SimConfig c;
  c.max_memory = GiB(16);
  EXPECT_EQ(c.initial_memory(), MiB(256));
  EXPECT_EQ(c.boot_blocks(), 2u);
}

TEST(MemModel, InitialMemoryFormulaOnRandomConfigs) {
  Rng rng(2024);
  for (int i = 0; i < 5; ++i) {
    SimConfig c;
    c.page_size = KiB(4) << uniform_below(rng, 3);
    c.block_size = c.page_size << (3 + uniform_below(rng, 6));
    c.page_struct_size = 32 + 32 * uniform_below(rng, 3);
    c.max_memory = c.block_size * (64 + uniform_below(rng, 4000));
    // Smallest block multiple covering the page structs, found by stepping.
    const Bytes raw = c.max_memory * c.page_struct_size / c.page_size;
    Bytes expect = 0;
    while (expect < raw) expect += c.block_size;
    EXPECT_EQ(c.initial_memory(), expect) << "config " << i;
    EXPECT_EQ(c.initial_memory() % c.block_size, 0u);
  }
}

TEST(MemModel, CnnPartitionIsThreeBlocks) {
  SimConfig c;
  EXPECT_EQ(c.blocks_for(MiB(384)), 3u);
  EXPECT_EQ(c.blocks_for(MiB(640)), 5u);
  EXPECT_TRUE(c.block_aligned(MiB(384)));
}

TEST(MemModel, HotMemLayoutOf64Blocks) {
  SimConfig c = tiny_config(8, 64);
  ASSERT_EQ(c.boot_blocks(), 1u);
  const GuestMemory mem = build_guest_memory(c, hotmem_layout(c, 3, c.block_size * 3, c.block_size * 2));
  // boot, shared, three private zones, and the trailing spare Movable zone
  ASSERT_EQ(mem.zone_count(), 6u);
  EXPECT_EQ(mem.zone(ZoneId{1}).kind, ZoneKind::HotMemShared);
  EXPECT_EQ(mem.free_pages(ZoneId{1}), 16u);
  for (std::uint32_t z = 2; z < 5; ++z) {
    const ZoneDescriptor& d = mem.zone(ZoneId{z});
    EXPECT_EQ(d.kind, ZoneKind::HotMemPrivate);
    EXPECT_EQ(d.block_ids.size(), 3u);
    EXPECT_TRUE(d.free_list.empty());
    for (BlockId b : d.block_ids) EXPECT_FALSE(mem.block(b).online);
  }
  EXPECT_EQ(mem.zone(ZoneId{5}).block_ids.size(), 64u - 1 - 2 - 9);
  EXPECT_EQ(mem.counts().occupied, 8u);  // kernel page structs
  EXPECT_TRUE(audit(mem).pass);
}

TEST(MemModel, EveryBlockInExactlyOneZone) {
  SimConfig c = tiny_config(8, 40);
  const GuestMemory mem = build_guest_memory(c, hotmem_layout(c, 4, c.block_size * 2, c.block_size * 3));
  std::vector<int> seen(mem.block_count(), 0);
  for (const ZoneDescriptor& z : mem.zones()) {
    for (BlockId b : z.block_ids) {
      ++seen[b.value];
      EXPECT_EQ(mem.block(b).zone_id, z.zone_id);
    }
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  for (Pfn p = 0; p < mem.page_count(); ++p) {
    const MemoryBlock& b = mem.block(mem.block_of(p));
    ASSERT_TRUE(p >= b.first_pfn && p < b.end_pfn);
  }
}

TEST(MemModel, LayoutErrors) {
  SimConfig c = tiny_config(8, 32);
  ZoneLayout overlap;
  overlap.zones.push_back({ZoneKind::Movable, 1, 4, 0});
  overlap.zones.push_back({ZoneKind::Movable, 3, 4, 0});
  EXPECT_THROW(build_guest_memory(c, overlap), ConfigError);
  ZoneLayout past;
  past.zones.push_back({ZoneKind::Movable, 30, 4, 0});
  EXPECT_THROW(build_guest_memory(c, past), ConfigError);
  EXPECT_THROW(hotmem_layout(c, 2, c.block_size + c.page_size, 0), ConfigError);
  EXPECT_THROW(hotmem_layout(c, 0, c.block_size, 0), ConfigError);

  SimConfig bad = c;
  bad.block_size = c.page_size * 3 / 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.max_memory = c.max_memory + c.page_size;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(MemModel, FreshMemoryPassesAudit) {
  SimConfig c = tiny_config(8, 16);
  const GuestMemory mem = build_guest_memory(c, movable_layout(c, c.block_size * 4));
  const AuditReport r = audit(mem);
  EXPECT_TRUE(r.pass) << r.first_violation;
  EXPECT_EQ(r.counts.total(), mem.page_count());
  EXPECT_EQ(r.counts.free, 32u);
  EXPECT_EQ(r.counts.occupied, 8u);
}

TEST(MemModel, CorruptedOccupancyFailsNamingTheBlock) {
  SimConfig c = tiny_config(8, 16);
  GuestMemory mem = build_guest_memory(c, movable_layout(c, c.block_size * 4));
  mem.debug_set_occupied_count(BlockId{3}, 5);
  const AuditReport r = audit(mem);
  EXPECT_FALSE(r.pass);
  EXPECT_NE(r.first_violation.find("block 3"), std::string::npos) << r.first_violation;
}

TEST(MemModel, AuditIsIdempotent) {
  SimConfig c = tiny_config(8, 16);
  GuestMemory mem = build_guest_memory(c, movable_layout(c, c.block_size * 4));
  mem.allocate_top(ZoneId{1}, ProcessId{0}, MappingKind::Anonymous);
  const AuditReport a = audit(mem);
  const AuditReport b = audit(mem);
  EXPECT_EQ(a, b);
  mem.debug_set_occupied_count(BlockId{2}, 7);
  EXPECT_EQ(audit(mem), audit(mem));
}

TEST(MemModel, PrimitivesConservePages) {
  SimConfig c = tiny_config(8, 16);
  GuestMemory mem = build_guest_memory(c, movable_layout(c, c.block_size * 2));
  const Pfn a = mem.allocate_top(ZoneId{1}, ProcessId{1}, MappingKind::Anonymous);
  const Pfn b = mem.allocate_top(ZoneId{1}, ProcessId{1}, MappingKind::FileBacked);
  ASSERT_NE(a, kNoPfn);
  // Unshuffled onlining hands out the lowest pfn first.
  EXPECT_EQ(a, mem.block(BlockId{1}).first_pfn);
  EXPECT_EQ(b, a + 1);
  const PageFrame pf = mem.page(b);
  EXPECT_EQ(pf.state, PageState::Occupied);
  EXPECT_EQ(pf.owner, ProcessId{1});
  EXPECT_EQ(pf.mapping_kind, MappingKind::FileBacked);

  const Pfn dst = mem.block(BlockId{2}).first_pfn;
  mem.migrate(a, dst);
  EXPECT_EQ(mem.state(a), PageState::Free);
  EXPECT_TRUE(mem.owned_by(dst, ProcessId{1}));
  mem.release(dst, true);
  mem.release(b, false);
  EXPECT_TRUE(audit(mem).pass);
  EXPECT_EQ(mem.counts().occupied, 8u);

  std::vector<BlockId> ids{BlockId{3}};
  mem.online_blocks(ids);
  EXPECT_THROW(mem.online_blocks(ids), InternalError);
  mem.allocate_at(mem.block(BlockId{3}).first_pfn, ProcessId{2}, MappingKind::Anonymous);
  EXPECT_THROW(mem.offline_block(BlockId{3}), InternalError);
  mem.release(mem.block(BlockId{3}).first_pfn, true);
  mem.offline_block(BlockId{3});
  EXPECT_EQ(mem.state(mem.block(BlockId{3}).first_pfn), PageState::Unplugged);
  EXPECT_TRUE(audit(mem).pass);
}

TEST(MemModel, UnpluggedPagesAreZeroedAndUnowned) {
  SimConfig c = tiny_config(8, 16);
  GuestMemory mem = build_guest_memory(c, movable_layout(c, c.block_size));
  const Pfn p = mem.allocate_top(ZoneId{1}, ProcessId{4}, MappingKind::Anonymous);
  mem.set_zeroed(p, false);
  mem.release(p, false);
  mem.offline_block(BlockId{1});
  const PageFrame f = mem.page(p);
  EXPECT_EQ(f.state, PageState::Unplugged);
  EXPECT_FALSE(f.owner.has_value());
  EXPECT_TRUE(f.zeroed);
}

}  // namespace
}  // namespace hotmem
