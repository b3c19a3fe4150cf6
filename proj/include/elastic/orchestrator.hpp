#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "elastic/wire.hpp"

namespace elastic {

/// Membership change the controller intends to commit.
struct GrowPlan {
  ViewOrigin kind = ViewOrigin::grow;
  std::uint32_t m = 0;
  std::vector<Rank> new_ranks;
  std::vector<Rank> clone_sources;          // FORK only
  std::map<Rank, std::uint32_t> placements;  // new rank -> node
  bool operator==(const GrowPlan&) const = default;
};

/// Node for each of `count` new ranks: least-loaded node first, ties to the lowest index.
std::vector<std::uint32_t> place(std::vector<std::uint32_t> node_load, std::uint32_t count);

/// Plans adding `m` ranks to a world of `n` ranks with the given per-node rank counts.
/// `busy` reports an already pending plan. Errors: ResizeInProgress, InvalidM.
GrowPlan plan_grow(std::uint32_t n, const std::vector<std::uint32_t>& node_load, ViewOrigin kind,
                   std::uint32_t m, bool busy);

/// Collects barrier entries keyed by (communicator, sequence number).
class BarrierService {
 public:
  using Key = std::tuple<std::uint8_t, std::uint32_t, std::uint32_t>;  // family, version, seq

  static Key key(const CommRef& concrete, std::uint32_t seq);

  /// Records an entry; true once every member has entered (the entries are then dropped).
  /// Errors: StrayEnter when `rank` is not a member.
  bool enter(const CommRef& concrete, std::uint32_t seq, Rank rank, const std::vector<Rank>& members);

  std::size_t entered(const CommRef& concrete, std::uint32_t seq) const;
  /// Largest number of entries currently waiting on any sequence number of `concrete`.
  std::size_t waiting_on(const CommRef& concrete) const;
  void clear() { entries_.clear(); }

 private:
  std::map<Key, std::set<Rank>> entries_;
};

/// First line `version <v> size <n> pending <...>`, then daemon and rank details.
std::string format_status(const wire::StatusReport& report);
/// The first line only.
std::string format_status_line(const wire::StatusReport& report);

}  // namespace elastic
