#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hotmem/guest_memory.hpp"
#include "hotmem/vanilla_mm.hpp"

namespace hotmem {

struct VmHotMemConfig {
  std::uint32_t concurrency_factor = 1;
  Bytes private_partition_size = 0;
  Bytes shared_partition_size = 0;

  void validate(const SimConfig& config) const;
};

struct PartitionDescriptor {
  PartitionId partition_id;
  ZoneId zone_id;
  Bytes size_bytes = 0;
  bool populated = false;
  std::uint32_t partition_users = 0;
  std::vector<ProcessId> owner_procs;  // sorted
};

struct Assignment {
  ProcessId proc;
  PartitionId partition;

  bool operator==(const Assignment&) const = default;
};

struct AttachResult {
  enum class Kind { Assigned, Queued };
  Kind kind = Kind::Queued;
  PartitionId partition;
};

struct ExitResult {
  std::uint64_t pages_freed = 0;
  // The partition's last user left.
  bool partition_emptied = false;
  // Set when the emptied partition went straight to the head of the waitqueue.
  std::optional<Assignment> handed_over;
};

struct HotMemFault {
  enum class Status { Ok, OomKilled };
  Status status = Status::Ok;
  Pfn pfn = kNoPfn;
  // Only meaningful for OomKilled.
  ExitResult exit;
};

struct PlugResult {
  std::vector<PartitionId> partitions;
  std::vector<Assignment> wakeups;
  std::uint32_t blocks = 0;
};

struct UnplugResult {
  std::uint32_t partitions_removed = 0;
  std::uint64_t pages_migrated = 0;
  std::uint32_t deferred = 0;
  std::uint32_t blocks = 0;
  std::vector<PartitionId> removed;
};

/// Partitioned allocator. Each private partition is one zone, handed to one
/// instance (plus its forks) at a time; file pages go to a shared zone and
/// are faulted in once. A partition can only be unplugged when no descriptor
/// references it, so unplugging never migrates.
class HotMemMm {
 public:
  explicit HotMemMm(GuestMemory& mem);

  GuestMemory& memory() { return *mem_; }
  const GuestMemory& memory() const { return *mem_; }

  /// Reserves the lowest-id populated free partition, or queues the process.
  AttachResult attach(ProcessId proc);

  /// Anonymous faults draw from the process's partition and OOM-kill it when
  /// the partition is full. File faults are deduplicated by key in the shared
  /// zone; throws SharedExhausted when it is full.
  HotMemFault fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key = std::nullopt);

  ExitResult oom_kill(ProcessId proc);

  /// The child joins the parent's partition.
  void fork(ProcessId parent, ProcessId child);

  /// Frees the process's anonymous pages without zeroing and drops its
  /// reference. A queued process is simply removed from the waitqueue.
  ExitResult exit(ProcessId proc);

  /// Populates the lowest-id empty partitions and wakes one waiter per
  /// partition. Throws PlugOverflow when not enough partitions are empty.
  PlugResult plug_partitions(std::uint32_t count);

  /// Removes up to `count` populated partitions nobody uses; the shortfall is
  /// reported as deferred.
  UnplugResult unplug_partitions(std::uint32_t count);

  std::uint32_t partition_count() const { return static_cast<std::uint32_t>(partitions_.size()); }
  const PartitionDescriptor& partition(PartitionId id) const { return partitions_.at(id.value); }
  const std::deque<ProcessId>& waitqueue() const { return waiters_; }
  std::optional<PartitionId> assigned(ProcessId proc) const;
  bool queued(ProcessId proc) const;
  std::uint32_t unpopulated_partitions() const;
  std::uint32_t free_partitions() const;
  std::uint32_t busy_partitions() const;
  Bytes partition_size() const { return partition_size_; }
  std::uint32_t blocks_per_partition() const { return blocks_per_partition_; }
  std::optional<ZoneId> shared_zone() const { return shared_zone_; }

  std::uint64_t anon_pages(ProcessId proc) const;
  std::optional<Pfn> shared_lookup(std::uint64_t key) const;
  std::uint32_t shared_mapcount(std::uint64_t key) const;
  std::size_t shared_pages() const { return shared_.size(); }
  std::uint64_t total_migrations() const { return 0; }
  std::uint64_t oom_kills() const { return oom_kills_; }
  const ZeroingWork& zeroing() const { return zeroing_; }

  /// Partition isolation, refcounts, shared containment, waitqueue shape.
  /// Empty string when everything holds.
  std::string check_invariants() const;

 private:
  struct ProcState {
    std::optional<PartitionId> partition;
    bool queued = false;
    std::uint64_t anon_pages = 0;
    std::unordered_set<std::uint64_t> mapped_keys;
  };
  struct SharedPage {
    Pfn pfn = kNoPfn;
    std::uint32_t mapcount = 0;
  };

  void assign(ProcessId proc, PartitionId id);
  std::optional<PartitionId> first_available() const;
  std::vector<Assignment> drain_waitqueue();
  ExitResult leave(ProcessId proc, ProcState& st);

  GuestMemory* mem_;
  std::vector<PartitionDescriptor> partitions_;
  std::vector<std::int64_t> partition_of_zone_;  // -1 for non-private zones
  std::optional<ZoneId> shared_zone_;
  Bytes partition_size_ = 0;
  std::uint32_t blocks_per_partition_ = 0;
  std::unordered_map<std::uint32_t, ProcState> procs_;
  std::deque<ProcessId> waiters_;
  std::unordered_map<std::uint64_t, SharedPage> shared_;
  std::uint64_t oom_kills_ = 0;
  ZeroingWork zeroing_;
};

}  // namespace hotmem
