#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "hotmem/sim_engine.hpp"

namespace hotmem {

/// How a per-minute count becomes arrival times.
enum class ExpansionRule {
  SeededUniform,  // independent uniform draws inside the minute
  EvenlySpaced,   // arrival i of c at (i + 0.5) * 60 s / c into the minute
};
ExpansionRule parse_expansion_rule(std::string_view s);

/// Reads either `timestamp_ms,function_name` rows or per-minute
/// `function_name,minute_index,count` rows ('#' comments and a header line
/// are allowed). Returns arrivals sorted by time, stable for ties.
/// Throws ParseError with the offending line number.
std::vector<TraceEvent> parse_trace(std::istream& in, std::uint64_t seed,
                                    ExpansionRule rule = ExpansionRule::SeededUniform);
std::vector<TraceEvent> ingest_trace(const std::filesystem::path& path, std::uint64_t seed,
                                     ExpansionRule rule = ExpansionRule::SeededUniform);

/// Writes the pre-expanded format.
void write_trace(std::ostream& out, const std::vector<TraceEvent>& events);

}  // namespace hotmem
