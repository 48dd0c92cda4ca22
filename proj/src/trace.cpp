#include "hotmem/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "hotmem/errors.hpp"
#include "hotmem/rng.hpp"
#include "hotmem/run_log.hpp"

namespace hotmem {

ExpansionRule parse_expansion_rule(std::string_view s) {
  if (s == "seeded_uniform" || s == "uniform") return ExpansionRule::SeededUniform;
  if (s == "evenly_spaced" || s == "even") return ExpansionRule::EvenlySpaced;
  throw ConfigError("unknown trace expansion rule " + std::string(s));
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

constexpr std::int64_t kMinuteNs = 60'000'000'000;

}  // namespace

std::vector<TraceEvent> parse_trace(std::istream& in, std::uint64_t seed, ExpansionRule rule) {
  std::vector<TraceEvent> events;
  std::string raw;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  bool first_data = true;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::vector<std::string_view> f = split(line);
    if (f.size() != 2 && f.size() != 3) throw ParseError("expected 2 or 3 comma-separated fields", line_no);
    const bool is_first = first_data;
    first_data = false;
    if (columns != 0 && f.size() != columns) throw ParseError("row shape differs from earlier rows", line_no);

    if (f.size() == 2) {
      double ms = 0;
      if (!parse_number(f[0], ms)) {
        if (is_first) continue;  // header
        throw ParseError("bad timestamp '" + std::string(f[0]) + "'", line_no);
      }
      if (!std::isfinite(ms) || ms < 0) throw ParseError("timestamp must be a non-negative number", line_no);
      if (f[1].empty()) throw ParseError("missing function name", line_no);
      columns = 2;
      events.push_back({at(SimDuration{std::llround(ms * 1e6)}), std::string(f[1])});
      continue;
    }

    std::int64_t minute = 0;
    std::int64_t count = 0;
    if (!parse_number(f[1], minute) || !parse_number(f[2], count)) {
      if (is_first) continue;  // header
      throw ParseError("minute index and count must be integers", line_no);
    }
    if (minute < 0 || count < 0) throw ParseError("minute index and count must be non-negative", line_no);
    if (f[0].empty()) throw ParseError("missing function name", line_no);
    columns = 3;
    Rng rng(mix_seed(seed, line_no));
    for (std::int64_t i = 0; i < count; ++i) {
      std::int64_t offset = 0;
      if (rule == ExpansionRule::EvenlySpaced) {
        offset = (2 * i + 1) * kMinuteNs / (2 * count);
      } else {
        offset = static_cast<std::int64_t>(uniform_below(rng, static_cast<std::uint64_t>(kMinuteNs)));
      }
      events.push_back({at(SimDuration{minute * kMinuteNs + offset}), std::string(f[0])});
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) { return a.arrival < b.arrival; });
  return events;
}

std::vector<TraceEvent> ingest_trace(const std::filesystem::path& path, std::uint64_t seed, ExpansionRule rule) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace " + path.string());
  return parse_trace(in, seed, rule);
}

void write_trace(std::ostream& out, const std::vector<TraceEvent>& events) {
  out << "timestamp_ms,function_name\n";
  for (const TraceEvent& e : events) out << format_ms(to_ns(e.arrival)) << ',' << e.function << '\n';
}

}  // namespace hotmem
