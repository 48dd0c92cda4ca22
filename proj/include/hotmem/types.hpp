#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <string_view>

namespace hotmem {

// Sizes are plain byte counts; the helpers keep call sites readable.
using Bytes = std::uint64_t;

constexpr Bytes KiB(std::uint64_t n) { return n << 10; }
constexpr Bytes MiB(std::uint64_t n) { return n << 20; }
constexpr Bytes GiB(std::uint64_t n) { return n << 30; }

// Page-frame numbers are dense and zero-based. Kept as a raw integer because
// the page arrays are indexed by it on every hot path.
using Pfn = std::uint32_t;
inline constexpr Pfn kNoPfn = std::numeric_limits<Pfn>::max();

/// Tagged integer identifier. Distinct tags do not convert into each other.
template <typename Tag, typename Rep = std::uint32_t>
struct StrongId {
  Rep value{};

  constexpr StrongId() = default;
  constexpr explicit StrongId(Rep v) : value(v) {}

  constexpr auto operator<=>(const StrongId&) const = default;
};

using ProcessId = StrongId<struct ProcessTag>;
using BlockId = StrongId<struct BlockTag>;
using ZoneId = StrongId<struct ZoneTag>;
using PartitionId = StrongId<struct PartitionTag>;
using VcpuId = StrongId<struct VcpuTag>;
using InstanceId = StrongId<struct InstanceTag>;

// Reserved owners. Real processes are numbered from 0 upward.
inline constexpr ProcessId kKernelOwner{std::numeric_limits<std::uint32_t>::max() - 1};
inline constexpr ProcessId kSharedOwner{std::numeric_limits<std::uint32_t>::max() - 2};

/// Simulated clock. Integer nanoseconds keep event ordering exact.
struct SimClock {
  using rep = std::int64_t;
  using period = std::nano;
  using duration = std::chrono::nanoseconds;
  using time_point = std::chrono::time_point<SimClock>;
  static constexpr bool is_steady = true;
};

using SimDuration = SimClock::duration;
using SimTime = SimClock::time_point;

inline constexpr SimTime kTimeZero{};

constexpr SimTime at(SimDuration since_start) { return SimTime{since_start}; }
constexpr std::int64_t to_ns(SimTime t) { return t.time_since_epoch().count(); }
constexpr std::int64_t to_ns(SimDuration d) { return d.count(); }

constexpr double to_ms(SimDuration d) { return static_cast<double>(d.count()) / 1e6; }
constexpr double to_ms(SimTime t) { return to_ms(t.time_since_epoch()); }
constexpr double to_seconds(SimDuration d) { return static_cast<double>(d.count()) / 1e9; }

enum class ZeroMode { InitOnAlloc, InitOnFree };
enum class MappingKind : std::uint8_t { Anonymous = 1, FileBacked = 2 };
enum class PageState : std::uint8_t { Unplugged = 0, Free = 1, Occupied = 2 };
enum class ZoneKind { Movable, HotMemPrivate, HotMemShared };
enum class Backend { Vanilla, HotMem, Static };

std::string_view to_string(ZeroMode m);
std::string_view to_string(MappingKind k);
std::string_view to_string(PageState s);
std::string_view to_string(ZoneKind k);
std::string_view to_string(Backend b);

ZeroMode parse_zero_mode(std::string_view s);
Backend parse_backend(std::string_view s);

}  // namespace hotmem

template <typename Tag, typename Rep>
struct std::hash<hotmem::StrongId<Tag, Rep>> {
  std::size_t operator()(const hotmem::StrongId<Tag, Rep>& id) const noexcept {
    return std::hash<Rep>{}(id.value);
  }
};
