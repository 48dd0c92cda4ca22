#include "hotmem/cost_model.hpp"

#include <algorithm>
#include <fstream>

#include "hotmem/errors.hpp"

namespace hotmem {

namespace {

struct Field {
  const char* key;
  SimDuration CostParams::*member;
};

constexpr Field kFields[] = {
    {"migrate_per_page_ns", &CostParams::migrate_per_page},
    {"zero_per_page_ns", &CostParams::zero_per_page},
    {"hotadd_metadata_per_block_ns", &CostParams::hotadd_metadata_per_block},
    {"online_fixed_per_block_ns", &CostParams::online_fixed_per_block},
    {"offline_fixed_per_block_ns", &CostParams::offline_fixed_per_block},
    {"remove_fixed_per_block_ns", &CostParams::remove_fixed_per_block},
    {"host_release_per_block_ns", &CostParams::host_release_per_block},
};

SimDuration times(SimDuration d, std::uint64_t n) { return d * static_cast<std::int64_t>(n); }

}  // namespace

void CostParams::validate() const {
  for (const Field& f : kFields) {
    if ((this->*f.member).count() < 0) throw ConfigError(std::string("cost parameter ") + f.key + " is negative");
  }
}

SimDuration plug_latency(const CostParams& p, std::uint64_t blocks, std::uint64_t zeroed_pages) {
  if (blocks == 0) throw UsageError("plug of zero blocks");
  return times(p.plug_fixed_per_block(), blocks) + times(p.zero_per_page, zeroed_pages);
}

SimDuration unplug_latency(const CostParams& p, std::uint64_t blocks, std::uint64_t migrated_pages,
                           std::uint64_t zeroed_pages) {
  return times(p.unplug_fixed_per_block(), blocks) + times(p.migrate_per_page, migrated_pages) +
         times(p.zero_per_page, zeroed_pages);
}

SimDuration driver_work(const CostParams& p, std::uint64_t migrated_pages, std::uint64_t zeroed_pages) {
  return times(p.migrate_per_page, migrated_pages) + times(p.zero_per_page, zeroed_pages);
}

void to_json(nlohmann::json& j, const CostParams& p) {
  j = nlohmann::json::object();
  for (const Field& f : kFields) j[f.key] = (p.*f.member).count();
}

void from_json(const nlohmann::json& j, CostParams& p) {
  if (!j.is_object()) throw ConfigError("cost parameters must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto known = std::find_if(std::begin(kFields), std::end(kFields), [&](const Field& f) { return it.key() == f.key; });
    if (known == std::end(kFields)) throw ConfigError("unknown cost parameter " + it.key());
    if (!it->is_number_integer()) throw ConfigError("cost parameter " + it.key() + " must be an integer");
    p.*(known->member) = SimDuration{it->get<std::int64_t>()};
  }
  p.validate();
}

CostParams load_cost_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cost parameters " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  CostParams p;
  from_json(j, p);
  return p;
}

void save_cost_params(const std::filesystem::path& path, const CostParams& p) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << nlohmann::json(p).dump(2) << '\n';
}

BusyWindow InterferenceState::charge_vcpu(VcpuId vcpu, SimTime now, SimDuration busy) {
  auto& list = windows_[vcpu.value];
  SimTime start = now;
  if (!list.empty()) start = std::max(start, list.back().end);
  const BusyWindow w{start, start + busy};
  if (busy.count() > 0) list.push_back(w);
  return w;
}

SimDuration InterferenceState::overlap(VcpuId vcpu, SimTime from, SimTime to) const {
  auto it = windows_.find(vcpu.value);
  if (it == windows_.end() || to <= from) return SimDuration::zero();
  const auto& list = it->second;
  auto w = std::lower_bound(list.begin(), list.end(), from, [](const BusyWindow& b, SimTime t) { return b.end <= t; });
  SimDuration sum{0};
  for (; w != list.end() && w->start < to; ++w) sum += std::min(w->end, to) - std::max(w->start, from);
  return sum;
}

SimTime InterferenceState::finish_time(VcpuId vcpu, SimTime start, SimDuration work) const {
  SimTime finish = start + work;
  auto it = windows_.find(vcpu.value);
  if (it == windows_.end()) return finish;
  const auto& list = it->second;
  auto w = std::lower_bound(list.begin(), list.end(), start, [](const BusyWindow& b, SimTime t) { return b.end <= t; });
  for (; w != list.end() && w->start < finish; ++w) finish += w->end - std::max(w->start, start);
  return finish;
}

SimDuration InterferenceState::total(VcpuId vcpu) const {
  SimDuration sum{0};
  if (auto it = windows_.find(vcpu.value); it != windows_.end()) {
    for (const BusyWindow& w : it->second) sum += w.end - w.start;
  }
  return sum;
}

SimDuration InterferenceState::total() const {
  SimDuration sum{0};
  for (const auto& [v, list] : windows_) sum += total(VcpuId{v});
  return sum;
}

const std::vector<BusyWindow>& InterferenceState::windows(VcpuId vcpu) const {
  static const std::vector<BusyWindow> kEmpty;
  auto it = windows_.find(vcpu.value);
  return it == windows_.end() ? kEmpty : it->second;
}

}  // namespace hotmem
