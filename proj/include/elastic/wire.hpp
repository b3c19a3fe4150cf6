#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "elastic/bytes.hpp"
#include "elastic/world.hpp"

// Frame layout (all integers little-endian):
//   u32 length   -- bytes after this field, i.e. 1 + body length
//   u8  kind
//   ... body     -- kind-specific; strings/blobs are u32-length-prefixed
namespace elastic::wire {

inline constexpr std::uint32_t kLatestVersion = 0xFFFFFFFFu;
inline constexpr std::uint32_t kNoRank = 0xFFFFFFFFu;
/// Barrier sequence number used by ranks entering a commit barrier from init.
inline constexpr std::uint32_t kCommitSeq = 0xFFFFFFFFu;
inline constexpr std::uint32_t kDefaultMaxFrame = 64u * 1024u * 1024u;

enum class Kind : std::uint8_t {
  join = 0x01,
  join_ack = 0x02,
  resize_req = 0x03,
  fork_req = 0x04,
  spawn_req = 0x05,
  ckpt_req = 0x06,
  ckpt_image = 0x07,
  epoch_commit = 0x08,
  world_resized_notify = 0x09,
  barrier_enter = 0x0A,
  barrier_release = 0x0B,
  status_req = 0x0C,
  status_rep = 0x0D,
  finalize = 0x0E,
  reply = 0x10,
  pending_cleared = 0x11,
  rank_exit = 0x12,
  launch = 0x13,
  ckpt_world_req = 0x14,
  merge_enter = 0x15,
  envelope = 0x20,
  marker = 0x21,
};

bool is_known_kind(std::uint8_t code);
std::string_view kind_name(Kind k);

struct Frame {
  Kind kind{};
  Bytes body;
  bool operator==(const Frame&) const = default;
};

Bytes encode_frame(const Frame& frame);
/// Decodes exactly one frame occupying all of `in`.
/// Errors: MalformedFrame (truncated/trailing), UnknownKind, Oversize.
Frame decode_frame(std::span<const std::byte> in, std::uint32_t max_frame = kDefaultMaxFrame);

/// Incremental frame extraction from a byte stream.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::uint32_t max_frame = kDefaultMaxFrame) : max_frame_(max_frame) {}
  void feed(std::span<const std::byte> data);
  /// Next complete frame, or nullopt if more bytes are needed.
  std::optional<Frame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  Bytes buf_;
  std::size_t pos_ = 0;
  std::uint32_t max_frame_;
};

// ---- messages -------------------------------------------------------------

struct Envelope {
  Rank src = 0;
  Rank dst = 0;
  CommRef comm = CommRef::world();
  std::int32_t tag = 0;
  Bytes payload;
  bool operator==(const Envelope&) const = default;
};

struct Marker {
  Rank src = 0;
  std::uint32_t ckpt_id = 0;
  bool operator==(const Marker&) const = default;
};

enum class Role : std::uint8_t { rank = 0, head = 1, fault = 2, client = 3 };

namespace join_flags {
inline constexpr std::uint8_t pending = 0x1;
inline constexpr std::uint8_t restored = 0x2;
inline constexpr std::uint8_t spawned = 0x4;
}  // namespace join_flags

struct Join {
  Role role = Role::rank;
  std::uint32_t id = 0;  // rank, node, or 0 for clients
  Endpoint endpoint;     // peer listener of a rank
  std::uint8_t flags = 0;
  std::uint32_t launch_id = 0;  // unique per launch; tells a stale process from a relaunch of its rank
  bool operator==(const Join&) const = default;
};

struct JoinAck {
  WorldHistory history;  // empty for non-rank roles
  bool operator==(const JoinAck&) const = default;
};

struct ResizeReq {
  std::uint32_t m = 0;
  bool operator==(const ResizeReq&) const = default;
};

struct ForkReq {
  std::uint32_t m = 0;
  Rank caller = 0;
  bool operator==(const ForkReq&) const = default;
};

/// From ranks (collective comm_spawn; caller set) or from an operator (caller = kNoRank).
struct SpawnReq {
  std::uint32_t count = 0;
  std::vector<std::string> command;
  Rank root = 0;
  Rank caller = kNoRank;
  bool operator==(const SpawnReq&) const = default;
};

enum class CkptMode : std::uint8_t { world = 0, fork = 1 };

struct CkptReq {
  Rank rank = 0;
  CkptMode mode = CkptMode::world;
  std::uint32_t ckpt_id = 0;
  bool operator==(const CkptReq&) const = default;
};

struct CkptImage {
  Rank rank = 0;
  std::uint32_t ckpt_id = 0;
  Bytes image;
  bool operator==(const CkptImage&) const = default;
};

struct EpochCommit {
  WorldView view;
  bool operator==(const EpochCommit&) const = default;
};

struct WorldResizedNotify {
  VersionTag version;
  bool operator==(const WorldResizedNotify&) const = default;
};

struct BarrierEnter {
  CommRef comm = CommRef::world();
  std::uint32_t seq = 0;
  Rank rank = 0;
  bool operator==(const BarrierEnter&) const = default;
};

struct BarrierRelease {
  CommRef comm = CommRef::world();
  std::uint32_t seq = 0;
  bool operator==(const BarrierRelease&) const = default;
};

struct StatusReq {
  bool operator==(const StatusReq&) const = default;
};

enum class RankState : std::uint8_t { launching = 0, live = 1, exited = 2 };

struct RankStatus {
  Rank rank = 0;
  std::uint32_t node = 0;
  RankState state = RankState::launching;
  std::int32_t exit_code = 0;
  bool operator==(const RankStatus&) const = default;
};

struct PendingInfo {
  ViewOrigin kind = ViewOrigin::grow;
  std::uint32_t m = 0;
  std::uint32_t joined = 0;
  std::uint32_t expected = 0;
  bool operator==(const PendingInfo&) const = default;
};

struct StatusReport {
  VersionTag version;
  std::uint32_t size = 0;
  std::optional<PendingInfo> pending;
  bool checkpoint_pending = false;
  std::uint32_t heads = 0;
  std::uint32_t faults = 0;
  std::vector<RankStatus> ranks;
  bool operator==(const StatusReport&) const = default;
};

struct StatusRep {
  StatusReport report;
  bool operator==(const StatusRep&) const = default;
};

struct Finalize {
  Rank rank = 0;
  bool operator==(const Finalize&) const = default;
};

/// Generic response: code 0 is success; fork results carry the fork return value.
struct Reply {
  std::int32_t code = 0;
  std::string text;
  bool operator==(const Reply&) const = default;
};

/// Error replies carry a code below kErrorReplyBase so they never collide with fork results.
inline constexpr std::int32_t kErrorReplyBase = -1000;
Reply error_reply(Errc code, const std::string& text);
std::optional<Errc> reply_error(const Reply& r);
/// Throws the Error encoded in `r`, if any.
void throw_if_error(const Reply& r);

struct PendingCleared {
  VersionTag version;
  std::string reason;
  bool operator==(const PendingCleared&) const = default;
};

struct RankExit {
  Rank rank = 0;
  std::int32_t code = 0;
  bool operator==(const RankExit&) const = default;
};

/// Controller -> head: start one fault daemon which launches one rank.
struct Launch {
  Rank rank = 0;
  std::uint32_t node = 0;
  std::vector<std::pair<std::string, std::string>> env;
  std::vector<std::string> command;
  bool operator==(const Launch&) const = default;
};

struct CkptWorldReq {
  std::uint32_t timeout_ms = 0;
  bool operator==(const CkptWorldReq&) const = default;
};

struct MergeEnter {
  Rank rank = 0;
  std::uint8_t high = 0;
  VersionTag version;
  bool operator==(const MergeEnter&) const = default;
};

using Message = std::variant<Join, JoinAck, ResizeReq, ForkReq, SpawnReq, CkptReq, CkptImage, EpochCommit,
                             WorldResizedNotify, BarrierEnter, BarrierRelease, StatusReq, StatusRep, Finalize,
                             Reply, PendingCleared, RankExit, Launch, CkptWorldReq, MergeEnter, Envelope,
                             Marker>;

Kind kind_of(const Message& msg);
Frame to_frame(const Message& msg);
Message from_frame(const Frame& frame);

/// Full frame bytes including the length prefix.
Bytes encode(const Message& msg);
Message decode(std::span<const std::byte> in, std::uint32_t max_frame = kDefaultMaxFrame);

// Sub-codecs shared with the checkpoint metadata table.
void put_view(ByteWriter& w, const WorldView& v);
WorldView get_view(ByteReader& r);
void put_history(ByteWriter& w, const WorldHistory& h);
WorldHistory get_history(ByteReader& r);
Bytes encode_history(const WorldHistory& h);
WorldHistory decode_history(std::span<const std::byte> in);

}  // namespace elastic::wire
