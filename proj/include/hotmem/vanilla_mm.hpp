#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "hotmem/guest_memory.hpp"
#include "hotmem/rng.hpp"

namespace hotmem {

struct FreeListPolicy {
  enum class Kind { GlobalLifo, BlockRoundRobin };

  Kind policy = Kind::GlobalLifo;
  std::uint64_t rng_seed = 1;
  // Onlined pages enter the LIFO in a seeded random order. This stands in for
  // the scrambled free lists of a guest that has been running for a while.
  bool scramble_on_online = true;
};

struct OfflineResult {
  std::uint32_t blocks_removed = 0;
  std::uint64_t pages_migrated = 0;
  std::uint64_t pages_zeroed = 0;
  bool failed = false;
  std::vector<BlockId> removed;
};

/// Pages zeroed by the guest, split by the path that paid for them.
struct ZeroingWork {
  std::uint64_t on_fault = 0;
  std::uint64_t on_free = 0;
  std::uint64_t on_online = 0;
  std::uint64_t on_offline = 0;
};

/// Movable-zone allocator: lazy page faults from a shared free list, so
/// concurrent processes interleave across blocks, and offlining that has to
/// migrate whatever still lives in the chosen blocks.
class VanillaMm {
 public:
  VanillaMm(GuestMemory& mem, FreeListPolicy policy);

  GuestMemory& memory() { return *mem_; }
  const GuestMemory& memory() const { return *mem_; }
  const FreeListPolicy& policy() const { return policy_; }
  /// Points a copied allocator at the copy of its memory.
  void rebind(GuestMemory& mem) { mem_ = &mem; }

  /// Serves one page fault. File-backed faults with a key hit the page cache
  /// first. Throws AllocationFailure when no Movable page is free.
  Pfn fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key = std::nullopt);

  /// Frees every anonymous page of `proc`; page-cache pages stay.
  std::uint64_t release(ProcessId proc);

  /// Offlines `request_bytes` worth of blocks, highest id first, migrating
  /// occupants (lowest free pfn elsewhere) out of the selected blocks.
  OfflineResult offline(Bytes request_bytes);

  /// Onlines Unplugged blocks; returns the pages zeroed by the guest.
  std::uint64_t online(std::span<const BlockId> blocks);

  /// Lowest-id Unplugged blocks of the hotpluggable Movable zones.
  std::vector<BlockId> plug_candidates(std::uint32_t count) const;

  /// Online hotpluggable blocks in offline scan order.
  std::vector<BlockId> offline_candidates() const;

  std::uint64_t free_pages() const;
  std::uint64_t anon_pages(ProcessId proc) const;
  std::size_t page_cache_size() const { return cache_by_key_.size(); }
  std::optional<Pfn> page_cache_lookup(std::uint64_t key) const;
  const ZeroingWork& zeroing() const { return zeroing_; }

 private:
  Pfn allocate(ProcessId owner, MappingKind kind);
  Pfn allocate_round_robin(ProcessId owner, MappingKind kind);

  GuestMemory* mem_;
  FreeListPolicy policy_;
  Rng rng_;
  std::vector<ZoneId> zones_;
  std::vector<BlockId> blocks_;  // ascending
  std::size_t rr_cursor_ = 0;
  std::unordered_map<std::uint32_t, std::uint64_t> anon_count_;
  std::unordered_map<std::uint64_t, Pfn> cache_by_key_;
  std::unordered_map<Pfn, std::uint64_t> cache_by_pfn_;
  ZeroingWork zeroing_;
};

}  // namespace hotmem
