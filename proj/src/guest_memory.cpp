#include "hotmem/guest_memory.hpp"

#include <algorithm>
#include <sstream>

#include "hotmem/errors.hpp"

namespace hotmem {

PageFrame GuestMemory::page(Pfn pfn) const {
  PageFrame f;
  f.pfn = pfn;
  f.state = state(pfn);
  if (owner_[pfn] != kNoOwner) f.owner = ProcessId{owner_[pfn]};
  const auto k = (meta_[pfn] >> kKindShift) & 3u;
  if (k != 0) f.mapping_kind = static_cast<MappingKind>(k);
  f.zeroed = zeroed(pfn);
  return f;
}

void GuestMemory::push_free(Pfn pfn) {
  auto& list = zones_[zone_of(pfn).value].free_list;
  list_pos_[pfn] = static_cast<std::uint32_t>(list.size());
  list.push_back(pfn);
}

void GuestMemory::unlist(Pfn pfn) {
  auto& list = zones_[zone_of(pfn).value].free_list;
  const std::uint32_t pos = list_pos_[pfn];
  if (pos == kNotListed || pos >= list.size() || list[pos] != pfn) {
    throw InternalError("page " + std::to_string(pfn) + " is not on its zone free list");
  }
  const Pfn last = list.back();
  list[pos] = last;
  list_pos_[last] = pos;
  list.pop_back();
  list_pos_[pfn] = kNotListed;
}

void GuestMemory::occupy(Pfn pfn, ProcessId owner, MappingKind kind) {
  set_state(pfn, PageState::Occupied);
  set_kind(pfn, static_cast<std::uint8_t>(kind));
  owner_[pfn] = owner.value;
  ++blocks_[pfn / pages_per_block_].occupied_count;
  --counts_.free;
  ++counts_.occupied;
}

void GuestMemory::online_blocks(std::span<const BlockId> ids, Rng* shuffle) {
  std::vector<Pfn> fresh;
  fresh.reserve(static_cast<std::size_t>(ids.size()) * pages_per_block_);
  for (BlockId id : ids) {
    MemoryBlock& b = blocks_.at(id.value);
    if (b.online) throw InternalError("block " + std::to_string(id.value) + " is already online");
  }
  for (BlockId id : ids) {
    MemoryBlock& b = blocks_[id.value];
    b.online = true;
    for (Pfn p = b.first_pfn; p < b.end_pfn; ++p) {
      set_state(p, PageState::Free);
      fresh.push_back(p);
    }
    counts_.unplugged -= pages_per_block_;
    counts_.free += pages_per_block_;
  }
  if (shuffle != nullptr) {
    fisher_yates(std::span<Pfn>(fresh), *shuffle);
  } else {
    // Lowest pfn ends on top of the stack.
    std::reverse(fresh.begin(), fresh.end());
  }
  for (Pfn p : fresh) push_free(p);
}

void GuestMemory::offline_block(BlockId id) {
  MemoryBlock& b = blocks_.at(id.value);
  if (!b.online) throw InternalError("block " + std::to_string(id.value) + " is already offline");
  if (b.occupied_count != 0) throw InternalError("block " + std::to_string(id.value) + " still has occupied pages");
  for (Pfn p = b.first_pfn; p < b.end_pfn; ++p) {
    unlist(p);
    set_state(p, PageState::Unplugged);
    set_kind(p, 0);
    meta_[p] |= kZeroedBit;
  }
  b.online = false;
  counts_.free -= pages_per_block_;
  counts_.unplugged += pages_per_block_;
}

Pfn GuestMemory::allocate_top(ZoneId z, ProcessId owner, MappingKind kind) {
  auto& list = zones_[z.value].free_list;
  if (list.empty()) return kNoPfn;
  const Pfn pfn = list.back();
  list.pop_back();
  list_pos_[pfn] = kNotListed;
  occupy(pfn, owner, kind);
  return pfn;
}

void GuestMemory::allocate_at(Pfn pfn, ProcessId owner, MappingKind kind) {
  if (state(pfn) != PageState::Free) throw InternalError("allocate_at on a non-free page");
  unlist(pfn);
  occupy(pfn, owner, kind);
}

void GuestMemory::release(Pfn pfn, bool zero) {
  if (state(pfn) != PageState::Occupied) throw InternalError("release of a non-occupied page");
  set_state(pfn, PageState::Free);
  set_kind(pfn, 0);
  owner_[pfn] = kNoOwner;
  if (zero) meta_[pfn] |= kZeroedBit;
  --blocks_[pfn / pages_per_block_].occupied_count;
  --counts_.occupied;
  ++counts_.free;
  push_free(pfn);
}

void GuestMemory::migrate(Pfn src, Pfn dst) {
  if (state(src) != PageState::Occupied || state(dst) != PageState::Free) {
    throw InternalError("migrate needs an occupied source and a free destination");
  }
  const ProcessId owner{owner_[src]};
  const MappingKind k = kind(src);
  const bool src_zeroed = zeroed(src);
  allocate_at(dst, owner, k);
  set_zeroed(dst, src_zeroed);
  release(src, false);
}

void GuestMemory::set_zeroed(Pfn pfn, bool z) {
  if (z) {
    meta_[pfn] |= kZeroedBit;
  } else {
    meta_[pfn] = static_cast<std::uint8_t>(meta_[pfn] & ~kZeroedBit);
  }
}

GuestMemory build_guest_memory(const SimConfig& config, const ZoneLayout& layout) {
  config.validate();
  GuestMemory mem;
  mem.config_ = config;
  mem.pages_per_block_ = config.pages_per_block();
  const std::uint32_t nblocks = config.block_count();
  const std::uint32_t npages = config.page_count();
  const std::uint32_t boot = config.boot_blocks();

  constexpr std::uint32_t kUnassigned = 0xFFFFFFFFu;
  std::vector<std::uint32_t> zone_of_block(nblocks, kUnassigned);
  std::vector<bool> populated(nblocks, false);

  std::vector<ZoneDescriptor> zones;
  zones.push_back({ZoneId{0}, ZoneKind::Movable, false, {}, {}});
  for (std::uint32_t b = 0; b < boot; ++b) zone_of_block[b] = 0;

  for (const ZoneSpec& spec : layout.zones) {
    const auto zid = static_cast<std::uint32_t>(zones.size());
    if (spec.block_count == 0) throw ConfigError("zone " + std::to_string(zid) + " has no blocks");
    if (spec.populated_blocks > spec.block_count) {
      throw ConfigError("zone " + std::to_string(zid) + " populates more blocks than it has");
    }
    if (static_cast<std::uint64_t>(spec.first_block) + spec.block_count > nblocks) {
      throw ConfigError("zone " + std::to_string(zid) + " extends past max_memory");
    }
    for (std::uint32_t b = spec.first_block; b < spec.first_block + spec.block_count; ++b) {
      if (zone_of_block[b] != kUnassigned) {
        throw ConfigError("zone " + std::to_string(zid) + " overlaps block " + std::to_string(b));
      }
      zone_of_block[b] = zid;
      populated[b] = (b - spec.first_block) < spec.populated_blocks;
    }
    zones.push_back({ZoneId{zid}, spec.kind, true, {}, {}});
  }

  std::uint32_t spare_zone = kUnassigned;
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    if (zone_of_block[b] != kUnassigned) continue;
    if (spare_zone == kUnassigned) {
      spare_zone = static_cast<std::uint32_t>(zones.size());
      zones.push_back({ZoneId{spare_zone}, ZoneKind::Movable, true, {}, {}});
    }
    zone_of_block[b] = spare_zone;
  }

  mem.meta_.assign(npages, GuestMemory::kZeroedBit);
  mem.owner_.assign(npages, GuestMemory::kNoOwner);
  mem.list_pos_.assign(npages, GuestMemory::kNotListed);
  mem.blocks_.resize(nblocks);
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    MemoryBlock& blk = mem.blocks_[b];
    blk.block_id = BlockId{b};
    blk.first_pfn = b * mem.pages_per_block_;
    blk.end_pfn = blk.first_pfn + mem.pages_per_block_;
    blk.zone_id = ZoneId{zone_of_block[b]};
    zones[zone_of_block[b]].block_ids.push_back(BlockId{b});
  }
  mem.zones_ = std::move(zones);
  mem.counts_.unplugged = npages;

  // Boot memory holds the kernel's page structs.
  std::vector<BlockId> boot_ids;
  for (std::uint32_t b = 0; b < boot; ++b) boot_ids.push_back(BlockId{b});
  mem.online_blocks(boot_ids);
  for (std::uint32_t b = 0; b < boot; ++b) {
    const MemoryBlock& blk = mem.blocks_[b];
    for (Pfn p = blk.first_pfn; p < blk.end_pfn; ++p) mem.allocate_at(p, kKernelOwner, MappingKind::Anonymous);
  }

  std::vector<BlockId> boot_populated;
  for (std::uint32_t b = boot; b < nblocks; ++b) {
    if (populated[b]) boot_populated.push_back(BlockId{b});
  }
  mem.online_blocks(boot_populated);
  return mem;
}

struct AuditAccess {
  static AuditReport run(const GuestMemory& mem) {
    AuditReport report;
    auto fail = [&](const std::string& msg) {
      if (report.pass) {
        report.pass = false;
        report.first_violation = msg;
      }
    };
    const std::uint32_t npages = mem.page_count();
    PageCounts counts;
    std::vector<std::uint64_t> zone_free(mem.zones_.size(), 0);
    for (const MemoryBlock& b : mem.blocks_) {
      std::uint32_t occupied = 0;
      for (Pfn p = b.first_pfn; p < b.end_pfn; ++p) {
        const PageState s = mem.state(p);
        const bool has_owner = mem.owner_[p] != GuestMemory::kNoOwner;
        switch (s) {
          case PageState::Unplugged:
            ++counts.unplugged;
            if (b.online) fail("unplugged page " + std::to_string(p) + " in online block " + std::to_string(b.block_id.value));
            if (has_owner || !mem.zeroed(p)) fail("unplugged page " + std::to_string(p) + " has an owner or is dirty");
            break;
          case PageState::Free:
            ++counts.free;
            ++zone_free[b.zone_id.value];
            if (!b.online) fail("free page " + std::to_string(p) + " in offline block " + std::to_string(b.block_id.value));
            if (has_owner) fail("free page " + std::to_string(p) + " has an owner");
            break;
          case PageState::Occupied:
            ++counts.occupied;
            ++occupied;
            if (!has_owner) fail("occupied page " + std::to_string(p) + " has no owner");
            break;
        }
      }
      if (occupied != b.occupied_count) {
        fail("block " + std::to_string(b.block_id.value) + " occupied_count " + std::to_string(b.occupied_count) +
             " != recount " + std::to_string(occupied));
      }
      if (!b.online && b.occupied_count != 0) fail("offline block " + std::to_string(b.block_id.value) + " has occupied pages");
    }
    if (counts.total() != npages) fail("page conservation violated");
    if (!(counts == mem.counts_)) fail("incremental page counts disagree with recount");
    for (const ZoneDescriptor& z : mem.zones_) {
      if (z.free_list.size() != zone_free[z.zone_id.value]) {
        fail("zone " + std::to_string(z.zone_id.value) + " free_list size " + std::to_string(z.free_list.size()) +
             " != free pages " + std::to_string(zone_free[z.zone_id.value]));
      }
      for (std::size_t i = 0; i < z.free_list.size(); ++i) {
        const Pfn p = z.free_list[i];
        if (p >= npages || mem.state(p) != PageState::Free || mem.zone_of(p) != z.zone_id || mem.list_pos_[p] != i) {
          fail("zone " + std::to_string(z.zone_id.value) + " free_list entry " + std::to_string(i) + " is inconsistent");
          break;
        }
      }
    }
    report.counts = counts;
    return report;
  }
};

AuditReport audit(const GuestMemory& mem) { return AuditAccess::run(mem); }

}  // namespace hotmem
