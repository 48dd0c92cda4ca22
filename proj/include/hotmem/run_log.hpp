#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "hotmem/sim_engine.hpp"

namespace hotmem {

/// Integer nanoseconds as milliseconds with six decimals, e.g. 1500 -> "0.001500".
std::string format_ms(std::int64_t ns);

/// "# scenario=<name> hash=<16 hex digits> seed=<n>"
std::string provenance_line(const std::string& scenario, std::uint64_t hash, std::uint64_t seed);

void write_resize_csv(std::ostream& out, const RunLog& log);
void write_invocations_csv(std::ostream& out, const RunLog& log);
void write_instances_csv(std::ostream& out, const RunLog& log);
void write_driver_busy_csv(std::ostream& out, const RunLog& log);
void write_latency_series_csv(std::ostream& out, const RunLog& log);
void write_vcpu_usage_csv(std::ostream& out, const RunLog& log);

nlohmann::json summary_json(const RunLog& log);

/// Writes every table plus summary.json into `dir` (created if missing).
void write_run_log(const std::filesystem::path& dir, const RunLog& log);

}  // namespace hotmem
