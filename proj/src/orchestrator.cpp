#include "elastic/orchestrator.hpp"

#include <algorithm>
#include <sstream>

namespace elastic {

std::vector<std::uint32_t> place(std::vector<std::uint32_t> node_load, std::uint32_t count) {
  if (node_load.empty()) throw Error(Errc::invalid_m, "no nodes to place ranks on");
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto it = std::min_element(node_load.begin(), node_load.end());
    out.push_back(static_cast<std::uint32_t>(it - node_load.begin()));
    ++*it;
  }
  return out;
}

GrowPlan plan_grow(std::uint32_t n, const std::vector<std::uint32_t>& node_load, ViewOrigin kind,
                   std::uint32_t m, bool busy) {
  if (busy) throw Error(Errc::resize_in_progress, "another resize is pending");
  if (kind == ViewOrigin::initial) throw Error(Errc::invalid_m, "initial views are not planned");
  if (m < 1) throw Error(Errc::invalid_m, "m must be at least 1");
  if (kind == ViewOrigin::fork && m > n) {
    throw Error(Errc::invalid_m, "fork of " + std::to_string(m) + " ranks in a world of " + std::to_string(n));
  }
  GrowPlan plan;
  plan.kind = kind;
  plan.m = m;
  auto nodes = place(node_load, m);
  for (std::uint32_t i = 0; i < m; ++i) {
    plan.new_ranks.push_back(n + i);
    plan.placements[n + i] = nodes[i];
    if (kind == ViewOrigin::fork) plan.clone_sources.push_back(i);
  }
  return plan;
}

BarrierService::Key BarrierService::key(const CommRef& concrete, std::uint32_t seq) {
  return {static_cast<std::uint8_t>(concrete.family()), concrete.version().value_or(VersionTag{}).value, seq};
}

bool BarrierService::enter(const CommRef& concrete, std::uint32_t seq, Rank rank, const std::vector<Rank>& members) {
  if (std::find(members.begin(), members.end(), rank) == members.end()) {
    throw Error(Errc::stray_enter, "rank " + std::to_string(rank) + " is not a member of " + concrete.str());
  }
  auto k = key(concrete, seq);
  auto& set = entries_[k];
  set.insert(rank);
  if (set.size() < members.size()) return false;
  entries_.erase(k);
  return true;
}

std::size_t BarrierService::entered(const CommRef& concrete, std::uint32_t seq) const {
  auto it = entries_.find(key(concrete, seq));
  return it == entries_.end() ? 0 : it->second.size();
}

std::size_t BarrierService::waiting_on(const CommRef& concrete) const {
  auto [fam, ver, seq] = key(concrete, 0);
  std::size_t best = 0;
  for (const auto& [k, set] : entries_) {
    if (std::get<0>(k) == fam && std::get<1>(k) == ver) best = std::max(best, set.size());
  }
  return best;
}

std::string format_status_line(const wire::StatusReport& r) {
  std::ostringstream os;
  os << "version " << r.version.str() << " size " << r.size << " pending ";
  if (!r.pending) {
    os << "none";
  } else {
    std::string kind(origin_name(r.pending->kind));
    std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char c) { return std::toupper(c); });
    os << kind << " m=" << r.pending->m << " joined " << r.pending->joined << "/" << r.pending->expected;
  }
  if (r.checkpoint_pending) os << " checkpoint pending";
  return os.str();
}

std::string format_status(const wire::StatusReport& r) {
  std::ostringstream os;
  os << format_status_line(r) << "\n";
  os << "heads " << r.heads << " faults " << r.faults << "\n";
  for (const auto& rs : r.ranks) {
    os << "rank " << rs.rank << " node " << rs.node << " ";
    switch (rs.state) {
      case wire::RankState::launching: os << "launching"; break;
      case wire::RankState::live: os << "live"; break;
      case wire::RankState::exited: os << "exited " << rs.exit_code; break;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace elastic
