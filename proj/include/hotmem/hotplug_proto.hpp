#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "hotmem/cost_model.hpp"
#include "hotmem/guest_os.hpp"

namespace hotmem {

enum class ResizeKind { Plug, Unplug };
std::string_view to_string(ResizeKind k);

struct ResizeRequest {
  std::uint64_t id = 0;
  ResizeKind kind = ResizeKind::Plug;
  Bytes size_bytes = 0;
  SimTime queued_at{};
  // When the guest starts handling it. Latency is measured from here.
  SimTime issued_at{};
  SimTime completed_at{};
  std::uint32_t blocks_touched = 0;
  std::uint32_t blocks_short = 0;
  std::uint64_t pages_migrated = 0;
  std::uint64_t pages_zeroed = 0;
  VcpuId driver_vcpu;
  SimDuration driver_busy{0};

  SimDuration latency() const { return completed_at - issued_at; }
};

struct HostView {
  Bytes vm_resident_bytes = 0;
  std::vector<std::pair<SimTime, Bytes>> released_log;
};

/// One VM's resize device. Requests are handled one at a time in submission
/// order. A plug takes effect in the guest when it completes; an unplug
/// isolates its blocks when it starts and the host releases them at completion.
class Hypervisor {
 public:
  Hypervisor(GuestOs& guest, CostParams costs, std::uint32_t vcpu_count, VcpuId driver_vcpu,
             std::uint32_t max_blocks_per_request = 0);

  /// Pins all guest-side resize work to `vcpu`. Throws ConfigError if out of range.
  void driver_interrupt_affinity(VcpuId vcpu);
  VcpuId driver_vcpu() const { return driver_vcpu_; }

  /// Queues a request, split into chunks when a per-request block cap is set.
  /// Returns the id of the last chunk. Throws ConfigError for unaligned sizes
  /// and PlugOverflow when a plug cannot fit next to plugs already queued.
  std::uint64_t submit(ResizeKind kind, Bytes size_bytes, SimTime now);

  bool busy() const { return current_.has_value(); }
  bool has_queued() const { return !queue_.empty(); }
  /// Blocks that a new plug could still claim.
  std::uint32_t plug_headroom_blocks() const;

  /// Starts the next queued request if the device is idle. Returns it with
  /// completed_at filled in; driver work is charged to `cpu`.
  std::optional<ResizeRequest> start_next(SimTime now, InterferenceState& cpu);

  struct Completion {
    ResizeRequest request;
    std::vector<Assignment> wakeups;
  };
  /// Finishes the in-flight request.
  Completion complete(SimTime now);

  const std::vector<ResizeRequest>& log() const { return log_; }
  const HostView& host() const { return host_; }
  const CostParams& costs() const { return costs_; }
  GuestOs& guest() { return *guest_; }

 private:
  GuestOs* guest_;
  CostParams costs_;
  std::uint32_t vcpu_count_;
  VcpuId driver_vcpu_;
  std::uint32_t max_blocks_;
  std::uint64_t next_id_ = 1;
  std::uint32_t pending_plug_blocks_ = 0;
  std::deque<ResizeRequest> queue_;
  std::optional<ResizeRequest> current_;
  std::vector<ResizeRequest> log_;
  HostView host_;
};

}  // namespace hotmem
