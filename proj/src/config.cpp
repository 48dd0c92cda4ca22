#include "hotmem/config.hpp"

#include <string>

#include "hotmem/errors.hpp"

namespace hotmem {

void SimConfig::validate() const {
  if (page_size == 0 || block_size == 0 || max_memory == 0) {
    throw ConfigError("page_size, block_size and max_memory must be non-zero");
  }
  if (block_size % page_size != 0) {
    throw ConfigError("block_size must be a multiple of page_size");
  }
  if (max_memory % block_size != 0) {
    throw ConfigError("max_memory must be a multiple of block_size");
  }
  if (max_memory / page_size >= kNoPfn) {
    throw ConfigError("max_memory has too many pages for 32-bit frame numbers");
  }
  if (initial_memory() > max_memory) {
    throw ConfigError("boot memory for page structs exceeds max_memory");
  }
}

Bytes SimConfig::initial_memory() const {
  const Bytes raw = max_memory / page_size * page_struct_size;
  return blocks_for(raw) * block_size;
}

Bytes max_memory_for_payload(const SimConfig& geometry, Bytes payload) {
  SimConfig probe = geometry;
  const Bytes payload_blocks = geometry.blocks_for(payload);
  Bytes total_blocks = payload_blocks + 1;
  // The boot share grows with max_memory, so iterate to the fixed point.
  for (int i = 0; i < 64; ++i) {
    probe.max_memory = total_blocks * geometry.block_size;
    const Bytes need = payload_blocks + probe.boot_blocks();
    if (need <= total_blocks) return probe.max_memory;
    total_blocks = need;
  }
  throw ConfigError("cannot size guest memory for payload " + std::to_string(payload));
}

ZoneLayout hotmem_layout(const SimConfig& config, std::uint32_t partitions, Bytes private_partition_size,
                         Bytes shared_partition_size) {
  if (partitions == 0) throw ConfigError("HotMem needs at least one private partition");
  if (private_partition_size == 0 || !config.block_aligned(private_partition_size)) {
    throw ConfigError("private partition size must be a non-zero multiple of block_size");
  }
  if (!config.block_aligned(shared_partition_size)) {
    throw ConfigError("shared partition size must be a multiple of block_size");
  }
  ZoneLayout layout;
  std::uint32_t next = config.boot_blocks();
  const auto shared_blocks = static_cast<std::uint32_t>(shared_partition_size / config.block_size);
  if (shared_blocks > 0) {
    layout.zones.push_back({ZoneKind::HotMemShared, next, shared_blocks, shared_blocks});
    next += shared_blocks;
  }
  const auto per = static_cast<std::uint32_t>(private_partition_size / config.block_size);
  for (std::uint32_t p = 0; p < partitions; ++p) {
    layout.zones.push_back({ZoneKind::HotMemPrivate, next, per, 0});
    next += per;
  }
  return layout;
}

ZoneLayout movable_layout(const SimConfig& config, Bytes populated_bytes) {
  if (!config.block_aligned(populated_bytes)) {
    throw ConfigError("populated Movable memory must be block-aligned");
  }
  const std::uint32_t first = config.boot_blocks();
  const std::uint32_t count = config.block_count() - first;
  const auto populated = static_cast<std::uint32_t>(populated_bytes / config.block_size);
  if (populated > count) throw ConfigError("populated Movable memory exceeds max_memory");
  ZoneLayout layout;
  if (count > 0) layout.zones.push_back({ZoneKind::Movable, first, count, populated});
  return layout;
}

}  // namespace hotmem
