#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hotmem/guest_memory.hpp"
#include "hotmem/hotmem_mm.hpp"
#include "hotmem/vanilla_mm.hpp"

namespace hotmem {

struct GuestPlug {
  std::uint32_t blocks = 0;
  std::uint64_t zeroed_pages = 0;
  // Waiters that got a partition from this plug.
  std::vector<Assignment> wakeups;
};

struct GuestUnplug {
  std::uint32_t blocks = 0;
  std::uint64_t migrated_pages = 0;
  std::uint64_t zeroed_pages = 0;
  // Requested blocks the guest could not give back (failed or deferred).
  std::uint32_t short_blocks = 0;
};

struct GuestFault {
  enum class Status { Ok, OomKilled, AllocationFailed };
  Status status = Status::Ok;
  Pfn pfn = kNoPfn;
  // Filled when the guest already tore the process down (OOM kill).
  ExitResult exit;
};

/// The guest kernel as the runtime and the hypervisor see it: process
/// lifecycle plus the guest half of the resize protocol.
class GuestOs {
 public:
  GuestOs() = default;
  GuestOs(const GuestOs&) = delete;
  GuestOs& operator=(const GuestOs&) = delete;
  virtual ~GuestOs() = default;

  virtual Backend backend() const = 0;
  virtual GuestMemory& memory() = 0;
  virtual const GuestMemory& memory() const = 0;

  /// Smallest number of blocks a resize can move.
  virtual std::uint32_t granule_blocks() const = 0;
  /// Hotpluggable blocks currently Unplugged.
  virtual std::uint32_t unplugged_blocks() const = 0;
  /// Pages the guest will zero when onlining `blocks`.
  virtual std::uint64_t plug_zeroing(std::uint32_t blocks) const = 0;
  virtual GuestPlug plug(std::uint32_t blocks) = 0;
  virtual GuestUnplug unplug(std::uint32_t blocks) = 0;

  /// Creates the process. False when it has to wait for memory (HotMem waitqueue).
  virtual bool admit(ProcessId proc) = 0;
  virtual GuestFault fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key) = 0;
  virtual ExitResult exit(ProcessId proc) = 0;

  virtual const ZeroingWork& zeroing() const = 0;
  /// Backend-specific invariants on top of the memory audit. Empty when they hold.
  virtual std::string check_invariants() const = 0;
};

class VanillaGuest final : public GuestOs {
 public:
  VanillaGuest(GuestMemory mem, FreeListPolicy policy, Backend kind = Backend::Vanilla);

  Backend backend() const override { return kind_; }
  GuestMemory& memory() override { return mem_; }
  const GuestMemory& memory() const override { return mem_; }
  std::uint32_t granule_blocks() const override { return 1; }
  std::uint32_t unplugged_blocks() const override;
  std::uint64_t plug_zeroing(std::uint32_t blocks) const override;
  GuestPlug plug(std::uint32_t blocks) override;
  GuestUnplug unplug(std::uint32_t blocks) override;
  bool admit(ProcessId) override { return true; }
  GuestFault fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key) override;
  ExitResult exit(ProcessId proc) override;
  const ZeroingWork& zeroing() const override { return mm_.zeroing(); }
  std::string check_invariants() const override { return {}; }

  VanillaMm& mm() { return mm_; }
  const VanillaMm& mm() const { return mm_; }

  /// Deep copy, including allocator and process state.
  std::unique_ptr<VanillaGuest> clone() const;

 private:
  VanillaGuest(const VanillaGuest& other);

  GuestMemory mem_;
  VanillaMm mm_;
  Backend kind_;
};

class HotMemGuest final : public GuestOs {
 public:
  explicit HotMemGuest(GuestMemory mem);

  Backend backend() const override { return Backend::HotMem; }
  GuestMemory& memory() override { return mem_; }
  const GuestMemory& memory() const override { return mem_; }
  std::uint32_t granule_blocks() const override { return mm_.blocks_per_partition(); }
  std::uint32_t unplugged_blocks() const override;
  std::uint64_t plug_zeroing(std::uint32_t) const override { return 0; }
  GuestPlug plug(std::uint32_t blocks) override;
  GuestUnplug unplug(std::uint32_t blocks) override;
  bool admit(ProcessId proc) override;
  GuestFault fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key) override;
  ExitResult exit(ProcessId proc) override { return mm_.exit(proc); }
  const ZeroingWork& zeroing() const override { return mm_.zeroing(); }
  std::string check_invariants() const override { return mm_.check_invariants(); }

  HotMemMm& mm() { return mm_; }
  const HotMemMm& mm() const { return mm_; }

 private:
  std::uint32_t partitions_for(std::uint32_t blocks) const;

  GuestMemory mem_;
  HotMemMm mm_;
};

}  // namespace hotmem
