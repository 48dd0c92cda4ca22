#include "hotmem/guest_os.hpp"

#include "hotmem/errors.hpp"

namespace hotmem {

VanillaGuest::VanillaGuest(GuestMemory mem, FreeListPolicy policy, Backend kind)
    : mem_(std::move(mem)), mm_(mem_, policy), kind_(kind) {}

VanillaGuest::VanillaGuest(const VanillaGuest& other)
    : GuestOs(), mem_(other.mem_), mm_(other.mm_), kind_(other.kind_) {
  mm_.rebind(mem_);
}

std::unique_ptr<VanillaGuest> VanillaGuest::clone() const {
  return std::unique_ptr<VanillaGuest>(new VanillaGuest(*this));
}

std::uint32_t VanillaGuest::unplugged_blocks() const {
  std::uint32_t n = 0;
  for (const ZoneDescriptor& z : mem_.zones()) {
    if (z.kind != ZoneKind::Movable || !z.hotpluggable) continue;
    for (BlockId b : z.block_ids) n += mem_.block(b).online ? 0 : 1;
  }
  return n;
}

std::uint64_t VanillaGuest::plug_zeroing(std::uint32_t blocks) const {
  if (mem_.config().zero_mode != ZeroMode::InitOnFree) return 0;
  return static_cast<std::uint64_t>(blocks) * mem_.pages_per_block();
}

GuestPlug VanillaGuest::plug(std::uint32_t blocks) {
  const std::vector<BlockId> targets = mm_.plug_candidates(blocks);
  if (targets.size() < blocks) {
    throw PlugOverflow("plug of " + std::to_string(blocks) + " blocks but only " + std::to_string(targets.size()) +
                       " are unplugged");
  }
  GuestPlug r;
  r.blocks = blocks;
  r.zeroed_pages = mm_.online(targets);
  return r;
}

GuestUnplug VanillaGuest::unplug(std::uint32_t blocks) {
  const OfflineResult off = mm_.offline(static_cast<Bytes>(blocks) * mem_.config().block_size);
  GuestUnplug r;
  r.blocks = off.blocks_removed;
  r.migrated_pages = off.pages_migrated;
  r.zeroed_pages = off.pages_zeroed;
  r.short_blocks = blocks - off.blocks_removed;
  return r;
}

GuestFault VanillaGuest::fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key) {
  GuestFault r;
  try {
    r.pfn = mm_.fault(proc, kind, file_key);
  } catch (const AllocationFailure&) {
    r.status = GuestFault::Status::AllocationFailed;
  }
  return r;
}

ExitResult VanillaGuest::exit(ProcessId proc) {
  ExitResult r;
  r.pages_freed = mm_.release(proc);
  return r;
}

HotMemGuest::HotMemGuest(GuestMemory mem) : mem_(std::move(mem)), mm_(mem_) {}

std::uint32_t HotMemGuest::partitions_for(std::uint32_t blocks) const {
  if (blocks % mm_.blocks_per_partition() != 0) {
    throw ConfigError("resize of " + std::to_string(blocks) + " blocks is not a whole number of partitions");
  }
  return blocks / mm_.blocks_per_partition();
}

std::uint32_t HotMemGuest::unplugged_blocks() const {
  return mm_.unpopulated_partitions() * mm_.blocks_per_partition();
}

GuestPlug HotMemGuest::plug(std::uint32_t blocks) {
  PlugResult p = mm_.plug_partitions(partitions_for(blocks));
  GuestPlug r;
  r.blocks = p.blocks;
  r.wakeups = std::move(p.wakeups);
  return r;
}

GuestUnplug HotMemGuest::unplug(std::uint32_t blocks) {
  const UnplugResult u = mm_.unplug_partitions(partitions_for(blocks));
  GuestUnplug r;
  r.blocks = u.blocks;
  r.migrated_pages = u.pages_migrated;
  r.short_blocks = u.deferred * mm_.blocks_per_partition();
  return r;
}

bool HotMemGuest::admit(ProcessId proc) { return mm_.attach(proc).kind == AttachResult::Kind::Assigned; }

GuestFault HotMemGuest::fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key) {
  HotMemFault f = mm_.fault(proc, kind, file_key);
  GuestFault r;
  r.pfn = f.pfn;
  if (f.status == HotMemFault::Status::OomKilled) {
    r.status = GuestFault::Status::OomKilled;
    r.exit = f.exit;
  }
  return r;
}

}  // namespace hotmem
