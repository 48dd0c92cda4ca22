#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hotmem/sim_engine.hpp"

namespace hotmem {

/// Nearest-rank percentile: the ceil(q * n)-th smallest value (1-based).
/// `values` need not be sorted. Throws UsageError when empty or q outside (0, 1].
SimDuration nearest_rank(std::vector<SimDuration> values, double q);

struct LatencyStats {
  std::size_t count = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  double p99_ms = 0;
  double stdev_ms = 0;  // population
};

/// Empty input gives nullopt.
std::optional<LatencyStats> latency_stats(const std::vector<SimDuration>& values);

/// Unplug latency statistics keyed by (VM name, request bytes).
std::map<std::pair<std::string, Bytes>, LatencyStats> unplug_latency_stats(const RunLog& log);

/// Unplugged bytes over time spent inside unplug requests, in MiB/s. Only
/// requests that released memory count. nullopt when there were none.
std::optional<double> reclaim_throughput(const RunLog& log, std::optional<std::uint32_t> vm = std::nullopt);

struct SecondBucket {
  std::int64_t second = 0;
  std::size_t count = 0;
  double mean_ms = 0;
};

struct FunctionLatency {
  std::string vm;
  std::string function;
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::size_t cold = 0;
  std::optional<double> p99_ms;
  std::optional<double> mean_ms;
  // Per-second mean over successful invocations, bucketed by completion time.
  std::vector<SecondBucket> series;
};

FunctionLatency latency_percentiles(const RunLog& log, std::uint32_t vm, std::uint32_t function);

struct CumulativePoint {
  std::int64_t second = 0;
  SimDuration busy{0};
};

/// Cumulative driver busy time on (vm, vcpu) sampled at the end of each
/// second from 0 through `last_second`.
std::vector<CumulativePoint> vcpu_cumulative_usage(const RunLog& log, std::uint32_t vm, std::uint32_t vcpu,
                                                   std::int64_t last_second);

/// Spearman rank correlation with average ranks for ties. nullopt when either side is constant.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

double coefficient_of_variation(const std::vector<double>& values);

}  // namespace hotmem
