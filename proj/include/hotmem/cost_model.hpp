#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <json.hpp>

#include "hotmem/types.hpp"

namespace hotmem {

/// Time charged per unit of mechanical work. Stored in nanoseconds.
struct CostParams {
  SimDuration migrate_per_page{1'891};
  SimDuration zero_per_page{400};
  SimDuration hotadd_metadata_per_block{4'500'000};
  SimDuration online_fixed_per_block{1'500'000};
  SimDuration offline_fixed_per_block{350'000};
  SimDuration remove_fixed_per_block{400'000};
  SimDuration host_release_per_block{250'000};

  /// Throws ConfigError on negative entries.
  void validate() const;

  SimDuration unplug_fixed_per_block() const {
    return offline_fixed_per_block + remove_fixed_per_block + host_release_per_block;
  }
  SimDuration plug_fixed_per_block() const { return hotadd_metadata_per_block + online_fixed_per_block; }

  bool operator==(const CostParams&) const = default;
};

/// Throws UsageError when blocks is zero.
SimDuration plug_latency(const CostParams& p, std::uint64_t blocks, std::uint64_t zeroed_pages);
SimDuration unplug_latency(const CostParams& p, std::uint64_t blocks, std::uint64_t migrated_pages,
                           std::uint64_t zeroed_pages);
/// The part of a resize that keeps the driver's vCPU busy.
SimDuration driver_work(const CostParams& p, std::uint64_t migrated_pages, std::uint64_t zeroed_pages);

void to_json(nlohmann::json& j, const CostParams& p);
void from_json(const nlohmann::json& j, CostParams& p);
CostParams load_cost_params(const std::filesystem::path& path);
void save_cost_params(const std::filesystem::path& path, const CostParams& p);

struct BusyWindow {
  SimTime start;
  SimTime end;
};

/// Driver work placed on vCPUs. Windows on one vCPU never overlap: new work
/// queues behind whatever is already scheduled there.
class InterferenceState {
 public:
  /// Returns the window the work occupies.
  BusyWindow charge_vcpu(VcpuId vcpu, SimTime now, SimDuration busy);

  /// Driver time on `vcpu` inside [from, to).
  SimDuration overlap(VcpuId vcpu, SimTime from, SimTime to) const;

  /// End time of `work` that starts at `start` on `vcpu` and is preempted by
  /// every driver window it runs into.
  SimTime finish_time(VcpuId vcpu, SimTime start, SimDuration work) const;

  SimDuration total(VcpuId vcpu) const;
  SimDuration total() const;
  const std::vector<BusyWindow>& windows(VcpuId vcpu) const;

 private:
  std::map<std::uint32_t, std::vector<BusyWindow>> windows_;
};

}  // namespace hotmem
