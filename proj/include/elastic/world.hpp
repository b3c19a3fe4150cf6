#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace elastic {

using Rank = std::uint32_t;

/// Epoch counter shared by every membership change: v0, v1, ...
struct VersionTag {
  std::uint32_t value = 0;

  constexpr auto operator<=>(const VersionTag&) const = default;
  constexpr VersionTag next() const { return VersionTag{value + 1}; }
  std::string str() const { return "v" + std::to_string(value); }
};

enum class Family : std::uint8_t {
  world = 0,
  parents = 1,
  children = 2,
  resized_world = 3,
  merged = 4,  // MERGED(id): id is carried in the version slot
};

std::string_view family_name(Family f);

/// Names a communicator family at a version, LATEST (no version), or NULL.
class CommRef {
 public:
  CommRef() = default;

  static CommRef null() { return CommRef{}; }
  static CommRef world(std::optional<VersionTag> v = std::nullopt) { return {Family::world, v}; }
  static CommRef parents(std::optional<VersionTag> v = std::nullopt) { return {Family::parents, v}; }
  static CommRef children(std::optional<VersionTag> v = std::nullopt) { return {Family::children, v}; }
  static CommRef resized_world(std::optional<VersionTag> v = std::nullopt) {
    return {Family::resized_world, v};
  }
  static CommRef merged(std::uint32_t id) { return {Family::merged, VersionTag{id}}; }

  bool is_null() const { return null_; }
  bool is_latest() const { return !null_ && !version_; }
  Family family() const { return family_; }
  /// nullopt means LATEST.
  std::optional<VersionTag> version() const { return version_; }
  CommRef at(VersionTag v) const { return null_ ? *this : CommRef{family_, v}; }

  std::string str() const;
  bool operator==(const CommRef&) const = default;

 private:
  CommRef(Family f, std::optional<VersionTag> v) : null_(false), family_(f), version_(v) {}

  bool null_ = true;
  Family family_ = Family::world;
  std::optional<VersionTag> version_;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
  static Endpoint parse(std::string_view text);
  bool operator==(const Endpoint&) const = default;
};

enum class ViewOrigin : std::uint8_t { initial = 0, grow = 1, fork = 2, spawn_merge = 3 };

std::string_view origin_name(ViewOrigin o);

/// Membership snapshot at one epoch. Ranks are exactly 0..size-1.
struct WorldView {
  VersionTag version;
  std::uint32_t size = 0;
  ViewOrigin origin = ViewOrigin::initial;
  std::vector<Endpoint> endpoints;  // indexed by rank
  std::vector<Rank> parents;        // fork views only
  std::vector<Rank> children;       // fork views only
  std::vector<Rank> merged_order;   // spawn-merge views only: rank order of RESIZED_WORLD

  /// Throws std::invalid_argument when the view breaks its own invariants.
  void validate() const;
  bool operator==(const WorldView&) const = default;
};

/// Append-only sequence of views; view k carries version k.
class WorldHistory {
 public:
  WorldHistory() = default;
  explicit WorldHistory(WorldView initial);

  bool empty() const { return views_.empty(); }
  std::size_t size() const { return views_.size(); }
  const WorldView& latest() const;
  const WorldView& at(VersionTag v) const;
  const std::vector<WorldView>& views() const { return views_; }
  VersionTag latest_version() const { return latest().version; }

  /// Latest version whose view was created by `origin`, if any.
  std::optional<VersionTag> latest_of(ViewOrigin origin) const;

  /// Errors: VersionSkew (non-contiguous tag), ShrinkUnsupported (size decreases).
  void commit(WorldView next);

  /// Replaces the endpoint of `rank` in every view that contains it.
  void refresh_endpoint(Rank rank, const Endpoint& ep);

  bool operator==(const WorldHistory&) const = default;

 private:
  std::vector<WorldView> views_;
};

WorldHistory commit_view(WorldHistory history, WorldView next);

/// LATEST becomes a concrete version. PARENTS/CHILDREN resolve to the newest fork
/// view and RESIZED_WORLD to the newest spawn-merge view; with none, the result is NULL.
CommRef resolve_default_version(const WorldHistory& history, const CommRef& comm);

/// Ordered ranks of `comm`. Errors: NullCommunicator, UnknownVersion.
std::vector<Rank> membership(const WorldHistory& history, const CommRef& comm);

}  // namespace elastic
