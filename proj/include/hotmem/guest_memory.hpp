#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hotmem/config.hpp"
#include "hotmem/rng.hpp"
#include "hotmem/types.hpp"

namespace hotmem {

/// Value snapshot of one page frame.
struct PageFrame {
  Pfn pfn = 0;
  PageState state = PageState::Unplugged;
  std::optional<ProcessId> owner;
  std::optional<MappingKind> mapping_kind;
  bool zeroed = true;
};

struct MemoryBlock {
  BlockId block_id;
  Pfn first_pfn = 0;
  Pfn end_pfn = 0;  // exclusive
  bool online = false;
  ZoneId zone_id;
  std::uint32_t occupied_count = 0;
};

struct ZoneDescriptor {
  ZoneId zone_id;
  ZoneKind kind = ZoneKind::Movable;
  // Boot memory is the only zone that can never be unplugged.
  bool hotpluggable = true;
  std::vector<BlockId> block_ids;
  // LIFO stack; the back is the next page handed out.
  std::vector<Pfn> free_list;
};

struct PageCounts {
  std::uint64_t unplugged = 0;
  std::uint64_t free = 0;
  std::uint64_t occupied = 0;

  std::uint64_t total() const { return unplugged + free + occupied; }
  bool operator==(const PageCounts&) const = default;
};

/// Page-frame array grouped into blocks grouped into zones. The allocators
/// mutate it only through the primitives below, which keep block occupancy,
/// free lists, and page counts in step.
class GuestMemory {
 public:
  const SimConfig& config() const { return config_; }
  std::uint32_t page_count() const { return static_cast<std::uint32_t>(meta_.size()); }
  std::uint32_t pages_per_block() const { return pages_per_block_; }
  std::uint32_t block_count() const { return static_cast<std::uint32_t>(blocks_.size()); }
  std::uint32_t zone_count() const { return static_cast<std::uint32_t>(zones_.size()); }

  const MemoryBlock& block(BlockId id) const { return blocks_.at(id.value); }
  const std::vector<MemoryBlock>& blocks() const { return blocks_; }
  const ZoneDescriptor& zone(ZoneId id) const { return zones_.at(id.value); }
  const std::vector<ZoneDescriptor>& zones() const { return zones_; }
  ZoneId boot_zone() const { return ZoneId{0}; }

  BlockId block_of(Pfn pfn) const { return BlockId{pfn / pages_per_block_}; }
  ZoneId zone_of(Pfn pfn) const { return blocks_[pfn / pages_per_block_].zone_id; }

  PageFrame page(Pfn pfn) const;
  PageState state(Pfn pfn) const { return static_cast<PageState>(meta_[pfn] & kStateMask); }
  std::uint32_t raw_owner(Pfn pfn) const { return owner_[pfn]; }
  bool owned_by(Pfn pfn, ProcessId p) const { return owner_[pfn] == p.value; }
  MappingKind kind(Pfn pfn) const { return static_cast<MappingKind>((meta_[pfn] >> kKindShift) & 3u); }
  bool zeroed(Pfn pfn) const { return (meta_[pfn] & kZeroedBit) != 0; }

  const PageCounts& counts() const { return counts_; }
  std::uint64_t online_pages() const { return counts_.free + counts_.occupied; }
  std::uint64_t free_pages(ZoneId z) const { return zones_[z.value].free_list.size(); }

  // --- mutation primitives -------------------------------------------------

  /// Brings Unplugged blocks online. Their pages join the zone free list,
  /// optionally shuffled together. Throws InternalError if a block is online.
  void online_blocks(std::span<const BlockId> ids, Rng* shuffle = nullptr);

  /// Takes an online block with no occupied pages offline.
  void offline_block(BlockId id);

  /// Pops the top of a zone's free list and marks it Occupied. kNoPfn if empty.
  Pfn allocate_top(ZoneId z, ProcessId owner, MappingKind kind);

  /// Allocates a specific Free page.
  void allocate_at(Pfn pfn, ProcessId owner, MappingKind kind);

  /// Returns an Occupied page to its zone free list (pushed on top).
  void release(Pfn pfn, bool zero);

  /// Moves the contents of Occupied `src` into Free `dst`. `src` becomes Free.
  void migrate(Pfn src, Pfn dst);

  void set_zeroed(Pfn pfn, bool zeroed);

  /// Test hook for negative audit tests.
  void debug_set_occupied_count(BlockId id, std::uint32_t value) { blocks_.at(id.value).occupied_count = value; }

 private:
  friend GuestMemory build_guest_memory(const SimConfig&, const ZoneLayout&);
  friend struct AuditAccess;

  static constexpr std::uint8_t kStateMask = 0x3;
  static constexpr unsigned kKindShift = 2;
  static constexpr std::uint8_t kZeroedBit = 0x10;
  static constexpr std::uint32_t kNoOwner = 0xFFFFFFFFu;
  static constexpr std::uint32_t kNotListed = 0xFFFFFFFFu;

  void set_state(Pfn pfn, PageState s) { meta_[pfn] = static_cast<std::uint8_t>((meta_[pfn] & ~kStateMask) | static_cast<std::uint8_t>(s)); }
  void set_kind(Pfn pfn, std::uint8_t k) { meta_[pfn] = static_cast<std::uint8_t>((meta_[pfn] & ~(3u << kKindShift)) | (k << kKindShift)); }
  void push_free(Pfn pfn);
  void unlist(Pfn pfn);
  void occupy(Pfn pfn, ProcessId owner, MappingKind kind);

  SimConfig config_;
  std::uint32_t pages_per_block_ = 0;
  std::vector<std::uint8_t> meta_;
  std::vector<std::uint32_t> owner_;
  std::vector<std::uint32_t> list_pos_;
  std::vector<MemoryBlock> blocks_;
  std::vector<ZoneDescriptor> zones_;
  PageCounts counts_;
};

/// Builds the guest. Zone 0 is boot memory (kernel metadata, never unplugged);
/// layout zones follow in order; blocks the layout leaves unassigned form a
/// trailing offline Movable zone.
GuestMemory build_guest_memory(const SimConfig& config, const ZoneLayout& layout);

struct AuditReport {
  bool pass = true;
  std::string first_violation;
  PageCounts counts;

  bool operator==(const AuditReport&) const = default;
};

/// Full consistency check: page conservation, block occupancy, free lists,
/// owner/state agreement. Read-only.
AuditReport audit(const GuestMemory& mem);

}  // namespace hotmem
