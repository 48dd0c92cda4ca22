#include "hotmem/vanilla_mm.hpp"

#include <algorithm>
#include <string>

#include "hotmem/errors.hpp"

namespace hotmem {

VanillaMm::VanillaMm(GuestMemory& mem, FreeListPolicy policy)
    : mem_(&mem), policy_(policy), rng_(policy.rng_seed) {
  for (const ZoneDescriptor& z : mem.zones()) {
    if (z.kind == ZoneKind::Movable && z.hotpluggable) {
      zones_.push_back(z.zone_id);
      blocks_.insert(blocks_.end(), z.block_ids.begin(), z.block_ids.end());
    }
  }
  std::sort(blocks_.begin(), blocks_.end());
}

Pfn VanillaMm::allocate(ProcessId owner, MappingKind kind) {
  if (policy_.policy == FreeListPolicy::Kind::BlockRoundRobin) return allocate_round_robin(owner, kind);
  for (ZoneId z : zones_) {
    const Pfn pfn = mem_->allocate_top(z, owner, kind);
    if (pfn != kNoPfn) return pfn;
  }
  return kNoPfn;
}

Pfn VanillaMm::allocate_round_robin(ProcessId owner, MappingKind kind) {
  const std::uint32_t ppb = mem_->pages_per_block();
  for (std::size_t step = 0; step < blocks_.size(); ++step) {
    const std::size_t idx = (rr_cursor_ + step) % blocks_.size();
    const MemoryBlock& b = mem_->block(blocks_[idx]);
    if (!b.online || b.occupied_count == ppb) continue;
    for (Pfn p = b.first_pfn; p < b.end_pfn; ++p) {
      if (mem_->state(p) == PageState::Free) {
        mem_->allocate_at(p, owner, kind);
        rr_cursor_ = idx + 1;
        return p;
      }
    }
  }
  return kNoPfn;
}

Pfn VanillaMm::fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key) {
  if (kind == MappingKind::FileBacked && file_key) {
    if (auto it = cache_by_key_.find(*file_key); it != cache_by_key_.end()) return it->second;
  }
  const ProcessId owner = kind == MappingKind::FileBacked ? kSharedOwner : proc;
  const Pfn pfn = allocate(owner, kind);
  if (pfn == kNoPfn) {
    throw AllocationFailure("no free Movable page for process " + std::to_string(proc.value));
  }
  if (mem_->config().zero_mode == ZeroMode::InitOnAlloc && !mem_->zeroed(pfn)) ++zeroing_.on_fault;
  mem_->set_zeroed(pfn, false);
  if (kind == MappingKind::FileBacked) {
    if (file_key) {
      cache_by_key_.emplace(*file_key, pfn);
      cache_by_pfn_.emplace(pfn, *file_key);
    }
  } else {
    ++anon_count_[proc.value];
  }
  return pfn;
}

std::uint64_t VanillaMm::release(ProcessId proc) {
  auto it = anon_count_.find(proc.value);
  if (it == anon_count_.end()) return 0;
  std::uint64_t remaining = it->second;
  const std::uint64_t total = remaining;
  const bool zero = mem_->config().zero_mode == ZeroMode::InitOnFree;
  for (BlockId id : blocks_) {
    if (remaining == 0) break;
    const MemoryBlock& b = mem_->block(id);
    if (!b.online || b.occupied_count == 0) continue;
    for (Pfn p = b.first_pfn; p < b.end_pfn && remaining > 0; ++p) {
      if (mem_->owned_by(p, proc) && mem_->state(p) == PageState::Occupied) {
        mem_->release(p, zero);
        --remaining;
      }
    }
  }
  if (remaining != 0) throw InternalError("process " + std::to_string(proc.value) + " page count drifted");
  if (zero) zeroing_.on_free += total;
  anon_count_.erase(it);
  return total;
}

std::vector<BlockId> VanillaMm::offline_candidates() const {
  std::vector<BlockId> out;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    if (mem_->block(*it).online) out.push_back(*it);
  }
  return out;
}

std::vector<BlockId> VanillaMm::plug_candidates(std::uint32_t count) const {
  std::vector<BlockId> out;
  for (BlockId id : blocks_) {
    if (out.size() == count) break;
    if (!mem_->block(id).online) out.push_back(id);
  }
  return out;
}

std::uint64_t VanillaMm::free_pages() const {
  std::uint64_t n = 0;
  for (ZoneId z : zones_) n += mem_->free_pages(z);
  return n;
}

OfflineResult VanillaMm::offline(Bytes request_bytes) {
  const SimConfig& cfg = mem_->config();
  if (!cfg.block_aligned(request_bytes)) {
    throw ConfigError("unplug request of " + std::to_string(request_bytes) + " bytes is not block-aligned");
  }
  const std::uint64_t wanted = request_bytes / cfg.block_size;
  const std::uint32_t ppb = mem_->pages_per_block();
  const std::vector<BlockId> candidates = offline_candidates();

  // Every online block is fully Free or Occupied, so k blocks can be isolated
  // exactly when the free pages in the whole zone cover k blocks' worth.
  const std::uint64_t feasible = free_pages() / ppb;
  const std::uint64_t k = std::min<std::uint64_t>({wanted, candidates.size(), feasible});

  OfflineResult result;
  std::vector<bool> selected(mem_->block_count(), false);
  for (std::uint64_t i = 0; i < k; ++i) selected[candidates[i].value] = true;

  std::size_t dest_block = 0;
  Pfn dest_pfn = blocks_.empty() ? 0 : mem_->block(blocks_[0]).first_pfn;
  auto next_destination = [&]() -> Pfn {
    while (dest_block < blocks_.size()) {
      const MemoryBlock& b = mem_->block(blocks_[dest_block]);
      if (b.online && !selected[b.block_id.value] && b.occupied_count < ppb) {
        if (dest_pfn < b.first_pfn) dest_pfn = b.first_pfn;
        for (; dest_pfn < b.end_pfn; ++dest_pfn) {
          if (mem_->state(dest_pfn) == PageState::Free) return dest_pfn++;
        }
      }
      ++dest_block;
      if (dest_block < blocks_.size()) dest_pfn = mem_->block(blocks_[dest_block]).first_pfn;
    }
    throw InternalError("ran out of migration destinations");
  };

  for (std::uint64_t i = 0; i < k; ++i) {
    const MemoryBlock& b = mem_->block(candidates[i]);
    for (Pfn p = b.first_pfn; p < b.end_pfn; ++p) {
      if (mem_->state(p) != PageState::Occupied) continue;
      const Pfn dst = next_destination();
      const bool cached = mem_->kind(p) == MappingKind::FileBacked;
      mem_->migrate(p, dst);
      ++result.pages_migrated;
      if (cached) {
        if (auto it = cache_by_pfn_.find(p); it != cache_by_pfn_.end()) {
          const std::uint64_t key = it->second;
          cache_by_pfn_.erase(it);
          cache_by_pfn_.emplace(dst, key);
          cache_by_key_[key] = dst;
        }
      }
    }
    mem_->offline_block(b.block_id);
    result.removed.push_back(b.block_id);
  }
  result.blocks_removed = static_cast<std::uint32_t>(k);
  if (cfg.zero_mode == ZeroMode::InitOnAlloc) {
    result.pages_zeroed = k * ppb;
    zeroing_.on_offline += result.pages_zeroed;
  }
  result.failed = k < wanted;
  return result;
}

std::uint64_t VanillaMm::online(std::span<const BlockId> blocks) {
  for (BlockId id : blocks) {
    if (mem_->block(id).online) throw InternalError("block " + std::to_string(id.value) + " is already online");
  }
  mem_->online_blocks(blocks, policy_.scramble_on_online ? &rng_ : nullptr);
  std::uint64_t zeroed = 0;
  if (mem_->config().zero_mode == ZeroMode::InitOnFree) {
    zeroed = static_cast<std::uint64_t>(blocks.size()) * mem_->pages_per_block();
    zeroing_.on_online += zeroed;
  }
  return zeroed;
}

std::uint64_t VanillaMm::anon_pages(ProcessId proc) const {
  auto it = anon_count_.find(proc.value);
  return it == anon_count_.end() ? 0 : it->second;
}

std::optional<Pfn> VanillaMm::page_cache_lookup(std::uint64_t key) const {
  if (auto it = cache_by_key_.find(key); it != cache_by_key_.end()) return it->second;
  return std::nullopt;
}

}  // namespace hotmem
