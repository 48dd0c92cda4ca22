#include "hotmem/hotplug_proto.hpp"

#include <algorithm>

#include "hotmem/errors.hpp"

namespace hotmem {

std::string_view to_string(ResizeKind k) { return k == ResizeKind::Plug ? "plug" : "unplug"; }

Hypervisor::Hypervisor(GuestOs& guest, CostParams costs, std::uint32_t vcpu_count, VcpuId driver_vcpu,
                       std::uint32_t max_blocks_per_request)
    : guest_(&guest), costs_(costs), vcpu_count_(vcpu_count), max_blocks_(max_blocks_per_request) {
  costs_.validate();
  driver_interrupt_affinity(driver_vcpu);
  const GuestMemory& mem = guest.memory();
  host_.vm_resident_bytes = mem.online_pages() * mem.config().page_size;
}

void Hypervisor::driver_interrupt_affinity(VcpuId vcpu) {
  if (vcpu.value >= vcpu_count_) {
    throw ConfigError("driver affinity vCPU " + std::to_string(vcpu.value) + " but the VM has " +
                      std::to_string(vcpu_count_));
  }
  driver_vcpu_ = vcpu;
}

std::uint32_t Hypervisor::plug_headroom_blocks() const {
  const std::uint32_t free = guest_->unplugged_blocks();
  return free > pending_plug_blocks_ ? free - pending_plug_blocks_ : 0;
}

std::uint64_t Hypervisor::submit(ResizeKind kind, Bytes size_bytes, SimTime now) {
  const SimConfig& cfg = guest_->memory().config();
  if (size_bytes == 0 || !cfg.block_aligned(size_bytes)) {
    throw ConfigError("resize of " + std::to_string(size_bytes) + " bytes is not a positive block multiple");
  }
  auto blocks = static_cast<std::uint32_t>(size_bytes / cfg.block_size);
  const std::uint32_t granule = guest_->granule_blocks();
  if (blocks % granule != 0) throw ConfigError("resize size is not a multiple of the guest granule");
  if (kind == ResizeKind::Plug && blocks > plug_headroom_blocks()) {
    throw PlugOverflow("plug of " + std::to_string(blocks) + " blocks exceeds max_memory");
  }
  std::uint32_t chunk = blocks;
  if (max_blocks_ > 0) chunk = std::max(granule, max_blocks_ / granule * granule);
  std::uint64_t last = 0;
  while (blocks > 0) {
    const std::uint32_t n = std::min(chunk, blocks);
    ResizeRequest r;
    r.id = next_id_++;
    r.kind = kind;
    r.size_bytes = static_cast<Bytes>(n) * cfg.block_size;
    r.queued_at = now;
    queue_.push_back(r);
    if (kind == ResizeKind::Plug) pending_plug_blocks_ += n;
    last = r.id;
    blocks -= n;
  }
  return last;
}

std::optional<ResizeRequest> Hypervisor::start_next(SimTime now, InterferenceState& cpu) {
  if (current_ || queue_.empty()) return std::nullopt;
  ResizeRequest r = queue_.front();
  queue_.pop_front();
  const std::uint32_t blocks = static_cast<std::uint32_t>(r.size_bytes / guest_->memory().config().block_size);
  r.issued_at = now;
  r.driver_vcpu = driver_vcpu_;
  SimDuration latency{0};
  if (r.kind == ResizeKind::Plug) {
    r.blocks_touched = blocks;
    r.pages_zeroed = guest_->plug_zeroing(blocks);
    latency = plug_latency(costs_, blocks, r.pages_zeroed);
  } else {
    const GuestUnplug u = guest_->unplug(blocks);
    r.blocks_touched = u.blocks;
    r.blocks_short = u.short_blocks;
    r.pages_migrated = u.migrated_pages;
    r.pages_zeroed = u.zeroed_pages;
    latency = unplug_latency(costs_, u.blocks, u.migrated_pages, u.zeroed_pages);
  }
  r.driver_busy = driver_work(costs_, r.pages_migrated, r.pages_zeroed);
  cpu.charge_vcpu(driver_vcpu_, now, r.driver_busy);
  r.completed_at = now + latency;
  current_ = r;
  return r;
}

Hypervisor::Completion Hypervisor::complete(SimTime now) {
  if (!current_) throw InternalError("no resize request in flight");
  Completion c;
  c.request = *current_;
  current_.reset();
  if (now != c.request.completed_at) throw InternalError("resize completed at the wrong time");
  const Bytes bytes = static_cast<Bytes>(c.request.blocks_touched) * guest_->memory().config().block_size;
  if (c.request.kind == ResizeKind::Plug) {
    GuestPlug p = guest_->plug(c.request.blocks_touched);
    pending_plug_blocks_ -= c.request.blocks_touched;
    c.wakeups = std::move(p.wakeups);
    host_.vm_resident_bytes += bytes;
  } else {
    host_.vm_resident_bytes -= bytes;
    if (bytes > 0) host_.released_log.emplace_back(now, bytes);
  }
  log_.push_back(c.request);
  return c;
}

}  // namespace hotmem
