#pragma once

#include <cstdint>
#include <vector>

#include "hotmem/types.hpp"

namespace hotmem {

/// Geometry and global modes of one guest.
struct SimConfig {
  Bytes page_size = KiB(4);
  Bytes block_size = MiB(128);
  Bytes max_memory = GiB(16);
  Bytes page_struct_size = 64;
  ZeroMode zero_mode = ZeroMode::InitOnFree;
  std::uint64_t rng_seed = 1;

  /// Throws ConfigError when the geometry is inconsistent.
  void validate() const;

  std::uint32_t pages_per_block() const { return static_cast<std::uint32_t>(block_size / page_size); }
  std::uint32_t block_count() const { return static_cast<std::uint32_t>(max_memory / block_size); }
  std::uint32_t page_count() const { return static_cast<std::uint32_t>(max_memory / page_size); }

  /// Boot memory sized to hold the page structs of max_memory, rounded up to whole blocks.
  Bytes initial_memory() const;
  std::uint32_t boot_blocks() const { return static_cast<std::uint32_t>(initial_memory() / block_size); }

  std::uint64_t blocks_for(Bytes bytes) const { return (bytes + block_size - 1) / block_size; }
  bool block_aligned(Bytes bytes) const { return bytes % block_size == 0; }
};

/// Smallest block-aligned max_memory whose non-boot part holds `payload` bytes.
Bytes max_memory_for_payload(const SimConfig& geometry, Bytes payload);

/// One zone of the layout, expressed in blocks. The boot zone is implicit.
struct ZoneSpec {
  ZoneKind kind = ZoneKind::Movable;
  std::uint32_t first_block = 0;
  std::uint32_t block_count = 0;
  // Blocks online at boot, counted from first_block.
  std::uint32_t populated_blocks = 0;
};

struct ZoneLayout {
  std::vector<ZoneSpec> zones;
};

/// Boot memory, one populated shared zone, and `partitions` empty private zones.
ZoneLayout hotmem_layout(const SimConfig& config, std::uint32_t partitions, Bytes private_partition_size,
                         Bytes shared_partition_size);

/// A single hotpluggable Movable zone over every non-boot block; the lowest
/// `populated_bytes` of it are online at boot.
ZoneLayout movable_layout(const SimConfig& config, Bytes populated_bytes);

}  // namespace hotmem
