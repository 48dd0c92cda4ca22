#include "hotmem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hotmem/errors.hpp"

namespace hotmem {

SimDuration nearest_rank(std::vector<SimDuration> values, double q) {
  if (values.empty()) throw UsageError("percentile of an empty set");
  if (!(q > 0.0 && q <= 1.0)) throw UsageError("percentile rank must be in (0, 1]");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

std::optional<LatencyStats> latency_stats(const std::vector<SimDuration>& values) {
  if (values.empty()) return std::nullopt;
  LatencyStats s;
  s.count = values.size();
  double sum = 0;
  for (SimDuration v : values) sum += to_ms(v);
  s.mean_ms = sum / static_cast<double>(s.count);
  double sq = 0;
  for (SimDuration v : values) sq += (to_ms(v) - s.mean_ms) * (to_ms(v) - s.mean_ms);
  s.stdev_ms = std::sqrt(sq / static_cast<double>(s.count));
  s.p50_ms = to_ms(nearest_rank(values, 0.50));
  s.p99_ms = to_ms(nearest_rank(values, 0.99));
  return s;
}

std::map<std::pair<std::string, Bytes>, LatencyStats> unplug_latency_stats(const RunLog& log) {
  std::map<std::pair<std::string, Bytes>, std::vector<SimDuration>> groups;
  for (const ResizeLogEntry& e : log.resizes) {
    if (e.request.kind != ResizeKind::Unplug) continue;
    groups[{log.vms.at(e.vm).name, e.request.size_bytes}].push_back(e.request.latency());
  }
  std::map<std::pair<std::string, Bytes>, LatencyStats> out;
  for (const auto& [key, values] : groups) out.emplace(key, *latency_stats(values));
  return out;
}

std::optional<double> reclaim_throughput(const RunLog& log, std::optional<std::uint32_t> vm) {
  double bytes = 0;
  std::int64_t ns = 0;
  for (const ResizeLogEntry& e : log.resizes) {
    if (e.request.kind != ResizeKind::Unplug || e.request.blocks_touched == 0) continue;
    if (vm && e.vm != *vm) continue;
    const Bytes block = e.request.size_bytes / (e.request.blocks_touched + e.request.blocks_short);
    bytes += static_cast<double>(e.request.blocks_touched) * static_cast<double>(block);
    ns += to_ns(e.request.latency());
  }
  if (ns <= 0) return std::nullopt;
  return (bytes / static_cast<double>(MiB(1))) / (static_cast<double>(ns) / 1e9);
}

FunctionLatency latency_percentiles(const RunLog& log, std::uint32_t vm, std::uint32_t function) {
  FunctionLatency out;
  out.vm = log.vms.at(vm).name;
  out.function = log.vms.at(vm).functions.at(function);
  std::vector<SimDuration> ok;
  std::map<std::int64_t, std::pair<std::size_t, double>> buckets;
  for (const InvocationRecord& r : log.invocations) {
    if (r.vm != vm || r.function != function) continue;
    if (r.status != InvocationStatus::Ok) {
      ++out.failed;
      continue;
    }
    if (r.cold) ++out.cold;
    ok.push_back(r.latency());
    auto& b = buckets[to_ns(r.completion) / 1'000'000'000];
    ++b.first;
    b.second += to_ms(r.latency());
  }
  out.ok = ok.size();
  if (auto s = latency_stats(ok)) {
    out.p99_ms = s->p99_ms;
    out.mean_ms = s->mean_ms;
  }
  for (const auto& [sec, b] : buckets) out.series.push_back({sec, b.first, b.second / static_cast<double>(b.first)});
  return out;
}

std::vector<CumulativePoint> vcpu_cumulative_usage(const RunLog& log, std::uint32_t vm, std::uint32_t vcpu,
                                                   std::int64_t last_second) {
  std::vector<CumulativePoint> out;
  for (std::int64_t s = 0; s <= last_second; ++s) {
    const SimTime edge = at(SimDuration{(s + 1) * 1'000'000'000});
    SimDuration busy{0};
    for (const DriverWindow& w : log.driver_windows) {
      if (w.vm != vm || w.vcpu != vcpu || w.start >= edge) continue;
      busy += std::min(w.end, edge) - w.start;
    }
    out.push_back({s, busy});
  }
  return out;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double coefficient_of_variation(const std::vector<double>& values) {
  if (values.empty()) return 0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (mean == 0) return 0;
  double sq = 0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / n) / mean;
}

}  // namespace hotmem
