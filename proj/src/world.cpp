#include "elastic/world.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <stdexcept>

#include "elastic/error.hpp"

namespace elastic {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::world: return "WORLD";
    case Family::parents: return "PARENTS";
    case Family::children: return "CHILDREN";
    case Family::resized_world: return "RESIZED_WORLD";
    case Family::merged: return "MERGED";
  }
  return "?";
}

std::string_view origin_name(ViewOrigin o) {
  switch (o) {
    case ViewOrigin::initial: return "INITIAL";
    case ViewOrigin::grow: return "GROW";
    case ViewOrigin::fork: return "FORK";
    case ViewOrigin::spawn_merge: return "SPAWN_MERGE";
  }
  return "?";
}

std::string CommRef::str() const {
  if (null_) return "NULL";
  std::string out = "(";
  out += family_name(family_);
  out += ", ";
  out += version_ ? version_->str() : "LATEST";
  out += ")";
  return out;
}

Endpoint Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw std::invalid_argument("endpoint must be host:port, got '" + std::string(text) + "'");
  }
  unsigned port = 0;
  auto digits = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535) {
    throw std::invalid_argument("bad port in endpoint '" + std::string(text) + "'");
  }
  return Endpoint{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

namespace {

bool is_permutation_of_iota(std::vector<Rank> v, std::uint32_t n) {
  if (v.size() != n) return false;
  std::sort(v.begin(), v.end());
  for (std::uint32_t i = 0; i < n; ++i) {
    if (v[i] != i) return false;
  }
  return true;
}

}  // namespace

void WorldView::validate() const {
  if (size == 0) throw std::invalid_argument("world size must be positive");
  if (endpoints.size() != size) throw std::invalid_argument("endpoints must cover every rank");
  if (origin == ViewOrigin::fork) {
    std::vector<Rank> all = parents;
    all.insert(all.end(), children.begin(), children.end());
    if (parents.empty() || children.empty() || !is_permutation_of_iota(all, size)) {
      throw std::invalid_argument("fork view must partition ranks into parents and children");
    }
  } else if (!parents.empty() || !children.empty()) {
    throw std::invalid_argument("only fork views carry a parents/children partition");
  }
  if (origin == ViewOrigin::spawn_merge) {
    if (!is_permutation_of_iota(merged_order, size)) {
      throw std::invalid_argument("merged order must be a permutation of the world");
    }
  } else if (!merged_order.empty()) {
    throw std::invalid_argument("only spawn-merge views carry a merged order");
  }
}

WorldHistory::WorldHistory(WorldView initial) { commit(std::move(initial)); }

const WorldView& WorldHistory::latest() const {
  if (views_.empty()) throw Error(Errc::unknown_version, "empty history");
  return views_.back();
}

const WorldView& WorldHistory::at(VersionTag v) const {
  if (v.value >= views_.size()) {
    throw Error(Errc::unknown_version, v.str() + " not committed (latest is v" +
                                           std::to_string(views_.empty() ? 0 : views_.size() - 1) + ")");
  }
  return views_[v.value];
}

std::optional<VersionTag> WorldHistory::latest_of(ViewOrigin origin) const {
  for (auto it = views_.rbegin(); it != views_.rend(); ++it) {
    if (it->origin == origin) return it->version;
  }
  return std::nullopt;
}

void WorldHistory::commit(WorldView next) {
  const std::uint32_t expected = static_cast<std::uint32_t>(views_.size());
  if (next.version.value != expected) {
    throw Error(Errc::version_skew,
                "expected v" + std::to_string(expected) + ", got " + next.version.str());
  }
  if (!views_.empty() && next.size < views_.back().size) {
    throw Error(Errc::shrink_unsupported, "size " + std::to_string(views_.back().size) + " -> " +
                                              std::to_string(next.size));
  }
  next.validate();
  views_.push_back(std::move(next));
}

void WorldHistory::refresh_endpoint(Rank rank, const Endpoint& ep) {
  for (auto& v : views_) {
    if (rank < v.size) v.endpoints[rank] = ep;
  }
}

WorldHistory commit_view(WorldHistory history, WorldView next) {
  history.commit(std::move(next));
  return history;
}

CommRef resolve_default_version(const WorldHistory& history, const CommRef& comm) {
  if (comm.is_null() || comm.version()) return comm;
  switch (comm.family()) {
    case Family::world:
      return comm.at(history.latest_version());
    case Family::parents:
    case Family::children:
      if (auto v = history.latest_of(ViewOrigin::fork)) return comm.at(*v);
      return CommRef::null();
    case Family::resized_world:
    case Family::merged:
      if (auto v = history.latest_of(ViewOrigin::spawn_merge)) return comm.at(*v);
      return CommRef::null();
  }
  return CommRef::null();
}

std::vector<Rank> membership(const WorldHistory& history, const CommRef& comm) {
  if (comm.is_null()) throw Error(Errc::null_communicator, "communicator is NULL");
  CommRef resolved = resolve_default_version(history, comm);
  if (resolved.is_null()) {
    throw Error(Errc::null_communicator, comm.str() + " resolves to NULL");
  }
  const WorldView& view = history.at(*resolved.version());
  switch (resolved.family()) {
    case Family::world: {
      std::vector<Rank> out(view.size);
      std::iota(out.begin(), out.end(), Rank{0});
      return out;
    }
    case Family::parents:
    case Family::children:
      if (view.origin != ViewOrigin::fork) {
        throw Error(Errc::null_communicator, resolved.str() + " was not created by a fork");
      }
      return resolved.family() == Family::parents ? view.parents : view.children;
    case Family::resized_world:
    case Family::merged:
      if (view.origin != ViewOrigin::spawn_merge) {
        throw Error(Errc::null_communicator, resolved.str() + " was not created by a merge");
      }
      return view.merged_order;
  }
  throw Error(Errc::null_communicator, "unknown family");
}

}  // namespace elastic
