#include "hotmem/hotmem_mm.hpp"

#include <algorithm>
#include <sstream>

#include "hotmem/errors.hpp"

namespace hotmem {

void VmHotMemConfig::validate(const SimConfig& config) const {
  if (concurrency_factor < 1) throw ConfigError("concurrency factor must be at least 1");
  if (private_partition_size == 0 || !config.block_aligned(private_partition_size)) {
    throw ConfigError("private partition size must be a positive multiple of the block size");
  }
  if (!config.block_aligned(shared_partition_size)) {
    throw ConfigError("shared partition size must be a multiple of the block size");
  }
}

HotMemMm::HotMemMm(GuestMemory& mem) : mem_(&mem), partition_of_zone_(mem.zone_count(), -1) {
  for (const ZoneDescriptor& z : mem.zones()) {
    if (z.kind == ZoneKind::HotMemShared) {
      if (shared_zone_) throw ConfigError("more than one shared partition");
      shared_zone_ = z.zone_id;
    } else if (z.kind == ZoneKind::HotMemPrivate) {
      const auto nblocks = static_cast<std::uint32_t>(z.block_ids.size());
      if (partitions_.empty()) {
        blocks_per_partition_ = nblocks;
        partition_size_ = static_cast<Bytes>(nblocks) * mem.config().block_size;
      } else if (nblocks != blocks_per_partition_) {
        throw ConfigError("private partitions differ in size");
      }
      PartitionDescriptor d;
      d.partition_id = PartitionId{static_cast<std::uint32_t>(partitions_.size())};
      d.zone_id = z.zone_id;
      d.size_bytes = partition_size_;
      d.populated = std::all_of(z.block_ids.begin(), z.block_ids.end(), [&](BlockId b) { return mem.block(b).online; });
      partition_of_zone_[z.zone_id.value] = d.partition_id.value;
      partitions_.push_back(std::move(d));
    }
  }
  if (partitions_.empty()) throw ConfigError("layout has no private partitions");
}

std::optional<PartitionId> HotMemMm::first_available() const {
  for (const PartitionDescriptor& d : partitions_) {
    if (d.populated && d.partition_users == 0) return d.partition_id;
  }
  return std::nullopt;
}

void HotMemMm::assign(ProcessId proc, PartitionId id) {
  PartitionDescriptor& d = partitions_[id.value];
  ++d.partition_users;
  d.owner_procs.insert(std::upper_bound(d.owner_procs.begin(), d.owner_procs.end(), proc), proc);
  ProcState& st = procs_[proc.value];
  st.partition = id;
  st.queued = false;
}

AttachResult HotMemMm::attach(ProcessId proc) {
  if (auto it = procs_.find(proc.value); it != procs_.end() && (it->second.partition || it->second.queued)) {
    throw UsageError("process " + std::to_string(proc.value) + " is already attached");
  }
  if (auto id = first_available()) {
    assign(proc, *id);
    return {AttachResult::Kind::Assigned, *id};
  }
  procs_[proc.value].queued = true;
  waiters_.push_back(proc);
  return {AttachResult::Kind::Queued, PartitionId{}};
}

HotMemFault HotMemMm::fault(ProcessId proc, MappingKind kind, std::optional<std::uint64_t> file_key) {
  auto it = procs_.find(proc.value);
  if (it == procs_.end() || !it->second.partition) {
    throw UsageError("process " + std::to_string(proc.value) + " has no partition");
  }
  ProcState& st = it->second;
  HotMemFault out;

  if (kind == MappingKind::FileBacked) {
    if (file_key) {
      if (auto hit = shared_.find(*file_key); hit != shared_.end()) {
        if (st.mapped_keys.insert(*file_key).second) ++hit->second.mapcount;
        out.pfn = hit->second.pfn;
        return out;
      }
    }
    if (!shared_zone_) throw SharedExhausted("VM has no shared partition");
    const Pfn pfn = mem_->allocate_top(*shared_zone_, kSharedOwner, MappingKind::FileBacked);
    if (pfn == kNoPfn) throw SharedExhausted("shared partition is full");
    if (!mem_->zeroed(pfn)) ++zeroing_.on_fault;
    mem_->set_zeroed(pfn, false);
    if (file_key) {
      shared_.emplace(*file_key, SharedPage{pfn, 1});
      st.mapped_keys.insert(*file_key);
    }
    out.pfn = pfn;
    return out;
  }

  const PartitionDescriptor& d = partitions_[st.partition->value];
  const Pfn pfn = mem_->allocate_top(d.zone_id, proc, MappingKind::Anonymous);
  if (pfn == kNoPfn) {
    out.status = HotMemFault::Status::OomKilled;
    out.exit = oom_kill(proc);
    return out;
  }
  // Plugged pages arrive zeroed; only pages dirtied by an earlier tenant cost anything.
  if (!mem_->zeroed(pfn)) ++zeroing_.on_fault;
  mem_->set_zeroed(pfn, false);
  ++st.anon_pages;
  out.pfn = pfn;
  return out;
}

ExitResult HotMemMm::oom_kill(ProcessId proc) {
  ++oom_kills_;
  return exit(proc);
}

void HotMemMm::fork(ProcessId parent, ProcessId child) {
  auto it = procs_.find(parent.value);
  if (it == procs_.end() || !it->second.partition) {
    throw UsageError("parent " + std::to_string(parent.value) + " has no partition");
  }
  if (procs_.contains(child.value)) throw UsageError("child " + std::to_string(child.value) + " already exists");
  const PartitionId id = *it->second.partition;
  assign(child, id);
}

ExitResult HotMemMm::exit(ProcessId proc) {
  auto it = procs_.find(proc.value);
  if (it == procs_.end()) throw UsageError("process " + std::to_string(proc.value) + " is unknown");
  ExitResult r = leave(proc, it->second);
  procs_.erase(proc.value);
  return r;
}

ExitResult HotMemMm::leave(ProcessId proc, ProcState& st) {
  ExitResult r;
  if (st.queued) {
    waiters_.erase(std::find(waiters_.begin(), waiters_.end(), proc));
    return r;
  }
  if (!st.partition) return r;

  for (std::uint64_t key : st.mapped_keys) {
    if (auto s = shared_.find(key); s != shared_.end() && s->second.mapcount > 0) --s->second.mapcount;
  }

  PartitionDescriptor& d = partitions_[st.partition->value];
  std::uint64_t remaining = st.anon_pages;
  const auto& zone = mem_->zone(d.zone_id);
  for (BlockId b : zone.block_ids) {
    if (remaining == 0) break;
    const MemoryBlock& blk = mem_->block(b);
    if (blk.occupied_count == 0) continue;
    for (Pfn p = blk.first_pfn; p < blk.end_pfn && remaining > 0; ++p) {
      if (mem_->state(p) == PageState::Occupied && mem_->owned_by(p, proc)) {
        mem_->release(p, false);
        --remaining;
      }
    }
  }
  if (remaining != 0) throw InternalError("process " + std::to_string(proc.value) + " page count drifted");
  r.pages_freed = st.anon_pages;

  --d.partition_users;
  d.owner_procs.erase(std::lower_bound(d.owner_procs.begin(), d.owner_procs.end(), proc));
  if (d.partition_users == 0) {
    r.partition_emptied = true;
    if (!waiters_.empty()) {
      const ProcessId head = waiters_.front();
      waiters_.pop_front();
      assign(head, d.partition_id);
      r.handed_over = Assignment{head, d.partition_id};
    }
  }
  st = ProcState{};
  return r;
}

std::vector<Assignment> HotMemMm::drain_waitqueue() {
  std::vector<Assignment> out;
  while (!waiters_.empty()) {
    auto id = first_available();
    if (!id) break;
    const ProcessId head = waiters_.front();
    waiters_.pop_front();
    assign(head, *id);
    out.push_back({head, *id});
  }
  return out;
}

PlugResult HotMemMm::plug_partitions(std::uint32_t count) {
  std::vector<PartitionId> targets;
  for (const PartitionDescriptor& d : partitions_) {
    if (targets.size() == count) break;
    if (!d.populated) targets.push_back(d.partition_id);
  }
  if (targets.size() < count) {
    throw PlugOverflow("plug of " + std::to_string(count) + " partitions but only " + std::to_string(targets.size()) +
                       " are empty");
  }
  PlugResult r;
  for (PartitionId id : targets) {
    PartitionDescriptor& d = partitions_[id.value];
    const auto& blocks = mem_->zone(d.zone_id).block_ids;
    mem_->online_blocks(blocks);
    d.populated = true;
    r.blocks += static_cast<std::uint32_t>(blocks.size());
  }
  r.partitions = std::move(targets);
  r.wakeups = drain_waitqueue();
  return r;
}

UnplugResult HotMemMm::unplug_partitions(std::uint32_t count) {
  UnplugResult r;
  for (PartitionDescriptor& d : partitions_) {
    if (r.partitions_removed == count) break;
    if (!d.populated || d.partition_users != 0) continue;
    for (BlockId b : mem_->zone(d.zone_id).block_ids) {
      mem_->offline_block(b);
      ++r.blocks;
    }
    d.populated = false;
    ++r.partitions_removed;
    r.removed.push_back(d.partition_id);
  }
  r.deferred = count - r.partitions_removed;
  return r;
}

std::optional<PartitionId> HotMemMm::assigned(ProcessId proc) const {
  auto it = procs_.find(proc.value);
  if (it == procs_.end()) return std::nullopt;
  return it->second.partition;
}

bool HotMemMm::queued(ProcessId proc) const {
  auto it = procs_.find(proc.value);
  return it != procs_.end() && it->second.queued;
}

std::uint32_t HotMemMm::unpopulated_partitions() const {
  return static_cast<std::uint32_t>(std::count_if(partitions_.begin(), partitions_.end(), [](const auto& d) { return !d.populated; }));
}

std::uint32_t HotMemMm::free_partitions() const {
  return static_cast<std::uint32_t>(std::count_if(partitions_.begin(), partitions_.end(),
                                                  [](const auto& d) { return d.populated && d.partition_users == 0; }));
}

std::uint32_t HotMemMm::busy_partitions() const {
  return static_cast<std::uint32_t>(
      std::count_if(partitions_.begin(), partitions_.end(), [](const auto& d) { return d.partition_users > 0; }));
}

std::uint64_t HotMemMm::anon_pages(ProcessId proc) const {
  auto it = procs_.find(proc.value);
  return it == procs_.end() ? 0 : it->second.anon_pages;
}

std::optional<Pfn> HotMemMm::shared_lookup(std::uint64_t key) const {
  if (auto it = shared_.find(key); it != shared_.end()) return it->second.pfn;
  return std::nullopt;
}

std::uint32_t HotMemMm::shared_mapcount(std::uint64_t key) const {
  auto it = shared_.find(key);
  return it == shared_.end() ? 0 : it->second.mapcount;
}

std::string HotMemMm::check_invariants() const {
  std::ostringstream err;
  std::vector<std::uint32_t> live(partitions_.size(), 0);
  std::uint32_t holders = 0;
  for (const auto& [pid, st] : procs_) {
    if (st.queued && st.partition) {
      err << "process " << pid << " is queued and assigned";
      return err.str();
    }
    if (st.partition) {
      ++live[st.partition->value];
      ++holders;
    }
  }
  if (busy_partitions() > partitions_.size() || holders < busy_partitions()) {
    return "admission bound violated";
  }
  for (const PartitionDescriptor& d : partitions_) {
    if (d.partition_users != d.owner_procs.size() || d.partition_users != live[d.partition_id.value]) {
      err << "partition " << d.partition_id.value << " refcount " << d.partition_users << " disagrees with its owners";
      return err.str();
    }
    if (d.partition_users > 0 && !d.populated) {
      err << "partition " << d.partition_id.value << " is in use but unpopulated";
      return err.str();
    }
    const auto& zone = mem_->zone(d.zone_id);
    for (BlockId b : zone.block_ids) {
      const MemoryBlock& blk = mem_->block(b);
      if (blk.online != d.populated) {
        err << "partition " << d.partition_id.value << " block " << b.value << " online state disagrees";
        return err.str();
      }
      if (blk.occupied_count == 0) continue;
      for (Pfn p = blk.first_pfn; p < blk.end_pfn; ++p) {
        if (mem_->state(p) != PageState::Occupied) continue;
        const std::uint32_t owner = mem_->raw_owner(p);
        auto it = procs_.find(owner);
        if (it == procs_.end() || !it->second.partition || *it->second.partition != d.partition_id ||
            mem_->kind(p) != MappingKind::Anonymous) {
          err << "page " << p << " in partition " << d.partition_id.value << " belongs to process " << owner;
          return err.str();
        }
      }
    }
  }
  std::unordered_set<Pfn> pfns;
  for (const auto& [key, sp] : shared_) {
    if (!shared_zone_ || mem_->zone_of(sp.pfn) != *shared_zone_ || mem_->state(sp.pfn) != PageState::Occupied ||
        mem_->kind(sp.pfn) != MappingKind::FileBacked) {
      err << "file key " << key << " is not backed by a shared page";
      return err.str();
    }
    if (!pfns.insert(sp.pfn).second) {
      err << "shared page " << sp.pfn << " backs two keys";
      return err.str();
    }
  }
  std::unordered_set<std::uint32_t> seen;
  for (ProcessId w : waiters_) {
    if (!seen.insert(w.value).second) return "process " + std::to_string(w.value) + " queued twice";
    auto it = procs_.find(w.value);
    if (it == procs_.end() || !it->second.queued) return "waitqueue entry " + std::to_string(w.value) + " is stale";
  }
  if (!waiters_.empty() && first_available()) return "a partition is free while processes wait";
  return {};
}

}  // namespace hotmem
