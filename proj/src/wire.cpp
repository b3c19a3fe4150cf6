#include "elastic/wire.hpp"

#include <stdexcept>
#include <type_traits>

namespace elastic::wire {

namespace {

constexpr std::uint8_t kNullFamily = 0xFF;

template <class>
inline constexpr bool kAlwaysFalse = false;

void put_comm(ByteWriter& w, const CommRef& c) {
  if (c.is_null()) {
    w.u8(kNullFamily);
    w.u32(kLatestVersion);
    return;
  }
  w.u8(static_cast<std::uint8_t>(c.family()));
  w.u32(c.version() ? c.version()->value : kLatestVersion);
}

CommRef get_comm(ByteReader& r) {
  auto fam = r.u8();
  auto ver = r.u32();
  if (fam == kNullFamily) return CommRef::null();
  std::optional<VersionTag> v;
  if (ver != kLatestVersion) v = VersionTag{ver};
  switch (static_cast<Family>(fam)) {
    case Family::world: return CommRef::world(v);
    case Family::parents: return CommRef::parents(v);
    case Family::children: return CommRef::children(v);
    case Family::resized_world: return CommRef::resized_world(v);
    case Family::merged:
      if (!v) throw Error(Errc::malformed_frame, "MERGED communicator needs an id");
      return CommRef::merged(v->value);
  }
  throw Error(Errc::malformed_frame, "unknown communicator family " + std::to_string(fam));
}

void put_endpoint(ByteWriter& w, const Endpoint& e) {
  w.str(e.host);
  w.u16(e.port);
}

Endpoint get_endpoint(ByteReader& r) {
  Endpoint e;
  e.host = r.str();
  e.port = r.u16();
  return e;
}

void put_strings(ByteWriter& w, const std::vector<std::string>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (const auto& s : v) w.str(s);
}

std::vector<std::string> get_strings(ByteReader& r) {
  auto n = r.u32();
  if (r.remaining() / 4 < n) throw Error(Errc::malformed_frame, "string list longer than input");
  std::vector<std::string> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.str());
  return out;
}

template <class E>
E get_enum(ByteReader& r, std::uint8_t max_value, const char* what) {
  auto v = r.u8();
  if (v > max_value) throw Error(Errc::malformed_frame, std::string("bad ") + what + " code");
  return static_cast<E>(v);
}

void put_report(ByteWriter& w, const StatusReport& s) {
  w.u32(s.version.value);
  w.u32(s.size);
  w.u8(s.pending ? 1 : 0);
  if (s.pending) {
    w.u8(static_cast<std::uint8_t>(s.pending->kind));
    w.u32(s.pending->m);
    w.u32(s.pending->joined);
    w.u32(s.pending->expected);
  }
  w.u8(s.checkpoint_pending ? 1 : 0);
  w.u32(s.heads);
  w.u32(s.faults);
  w.u32(static_cast<std::uint32_t>(s.ranks.size()));
  for (const auto& rs : s.ranks) {
    w.u32(rs.rank);
    w.u32(rs.node);
    w.u8(static_cast<std::uint8_t>(rs.state));
    w.i32(rs.exit_code);
  }
}

StatusReport get_report(ByteReader& r) {
  StatusReport s;
  s.version = VersionTag{r.u32()};
  s.size = r.u32();
  if (r.u8() != 0) {
    PendingInfo p;
    p.kind = get_enum<ViewOrigin>(r, 3, "origin");
    p.m = r.u32();
    p.joined = r.u32();
    p.expected = r.u32();
    s.pending = p;
  }
  s.checkpoint_pending = r.u8() != 0;
  s.heads = r.u32();
  s.faults = r.u32();
  auto n = r.u32();
  if (r.remaining() / 13 < n) throw Error(Errc::malformed_frame, "rank table longer than input");
  for (std::uint32_t i = 0; i < n; ++i) {
    RankStatus rs;
    rs.rank = r.u32();
    rs.node = r.u32();
    rs.state = get_enum<RankState>(r, 2, "rank state");
    rs.exit_code = r.i32();
    s.ranks.push_back(rs);
  }
  return s;
}

void put_body(ByteWriter& w, const Message& msg) {
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Join>) {
          w.u8(static_cast<std::uint8_t>(m.role));
          w.u32(m.id);
          put_endpoint(w, m.endpoint);
          w.u8(m.flags);
          w.u32(m.launch_id);
        } else if constexpr (std::is_same_v<T, JoinAck>) {
          put_history(w, m.history);
        } else if constexpr (std::is_same_v<T, ResizeReq>) {
          w.u32(m.m);
        } else if constexpr (std::is_same_v<T, ForkReq>) {
          w.u32(m.m);
          w.u32(m.caller);
        } else if constexpr (std::is_same_v<T, SpawnReq>) {
          w.u32(m.count);
          put_strings(w, m.command);
          w.u32(m.root);
          w.u32(m.caller);
        } else if constexpr (std::is_same_v<T, CkptReq>) {
          w.u32(m.rank);
          w.u8(static_cast<std::uint8_t>(m.mode));
          w.u32(m.ckpt_id);
        } else if constexpr (std::is_same_v<T, CkptImage>) {
          w.u32(m.rank);
          w.u32(m.ckpt_id);
          w.blob(m.image);
        } else if constexpr (std::is_same_v<T, EpochCommit>) {
          put_view(w, m.view);
        } else if constexpr (std::is_same_v<T, WorldResizedNotify>) {
          w.u32(m.version.value);
        } else if constexpr (std::is_same_v<T, BarrierEnter>) {
          put_comm(w, m.comm);
          w.u32(m.seq);
          w.u32(m.rank);
        } else if constexpr (std::is_same_v<T, BarrierRelease>) {
          put_comm(w, m.comm);
          w.u32(m.seq);
        } else if constexpr (std::is_same_v<T, StatusReq>) {
        } else if constexpr (std::is_same_v<T, StatusRep>) {
          put_report(w, m.report);
        } else if constexpr (std::is_same_v<T, Finalize>) {
          w.u32(m.rank);
        } else if constexpr (std::is_same_v<T, Reply>) {
          w.i32(m.code);
          w.str(m.text);
        } else if constexpr (std::is_same_v<T, PendingCleared>) {
          w.u32(m.version.value);
          w.str(m.reason);
        } else if constexpr (std::is_same_v<T, RankExit>) {
          w.u32(m.rank);
          w.i32(m.code);
        } else if constexpr (std::is_same_v<T, Launch>) {
          w.u32(m.rank);
          w.u32(m.node);
          w.u32(static_cast<std::uint32_t>(m.env.size()));
          for (const auto& [k, v] : m.env) {
            w.str(k);
            w.str(v);
          }
          put_strings(w, m.command);
        } else if constexpr (std::is_same_v<T, CkptWorldReq>) {
          w.u32(m.timeout_ms);
        } else if constexpr (std::is_same_v<T, MergeEnter>) {
          w.u32(m.rank);
          w.u8(m.high);
          w.u32(m.version.value);
        } else if constexpr (std::is_same_v<T, Envelope>) {
          w.u32(m.src);
          w.u32(m.dst);
          put_comm(w, m.comm);
          w.i32(m.tag);
          w.blob(m.payload);
        } else if constexpr (std::is_same_v<T, Marker>) {
          w.u32(m.src);
          w.u32(m.ckpt_id);
        } else {
          static_assert(kAlwaysFalse<T>, "unhandled message");
        }
      },
      msg);
}

Message get_body(Kind kind, ByteReader& r) {
  switch (kind) {
    case Kind::join: {
      Join m;
      m.role = get_enum<Role>(r, 3, "role");
      m.id = r.u32();
      m.endpoint = get_endpoint(r);
      m.flags = r.u8();
      m.launch_id = r.u32();
      return m;
    }
    case Kind::join_ack: return JoinAck{get_history(r)};
    case Kind::resize_req: return ResizeReq{r.u32()};
    case Kind::fork_req: {
      ForkReq m;
      m.m = r.u32();
      m.caller = r.u32();
      return m;
    }
    case Kind::spawn_req: {
      SpawnReq m;
      m.count = r.u32();
      m.command = get_strings(r);
      m.root = r.u32();
      m.caller = r.u32();
      return m;
    }
    case Kind::ckpt_req: {
      CkptReq m;
      m.rank = r.u32();
      m.mode = get_enum<CkptMode>(r, 1, "checkpoint mode");
      m.ckpt_id = r.u32();
      return m;
    }
    case Kind::ckpt_image: {
      CkptImage m;
      m.rank = r.u32();
      m.ckpt_id = r.u32();
      m.image = r.blob();
      return m;
    }
    case Kind::epoch_commit: return EpochCommit{get_view(r)};
    case Kind::world_resized_notify: return WorldResizedNotify{VersionTag{r.u32()}};
    case Kind::barrier_enter: {
      BarrierEnter m;
      m.comm = get_comm(r);
      m.seq = r.u32();
      m.rank = r.u32();
      return m;
    }
    case Kind::barrier_release: {
      BarrierRelease m;
      m.comm = get_comm(r);
      m.seq = r.u32();
      return m;
    }
    case Kind::status_req: return StatusReq{};
    case Kind::status_rep: return StatusRep{get_report(r)};
    case Kind::finalize: return Finalize{r.u32()};
    case Kind::reply: {
      Reply m;
      m.code = r.i32();
      m.text = r.str();
      return m;
    }
    case Kind::pending_cleared: {
      PendingCleared m;
      m.version = VersionTag{r.u32()};
      m.reason = r.str();
      return m;
    }
    case Kind::rank_exit: {
      RankExit m;
      m.rank = r.u32();
      m.code = r.i32();
      return m;
    }
    case Kind::launch: {
      Launch m;
      m.rank = r.u32();
      m.node = r.u32();
      auto n = r.u32();
      if (r.remaining() / 8 < n) throw Error(Errc::malformed_frame, "env table longer than input");
      for (std::uint32_t i = 0; i < n; ++i) {
        auto k = r.str();
        auto v = r.str();
        m.env.emplace_back(std::move(k), std::move(v));
      }
      m.command = get_strings(r);
      return m;
    }
    case Kind::ckpt_world_req: return CkptWorldReq{r.u32()};
    case Kind::merge_enter: {
      MergeEnter m;
      m.rank = r.u32();
      m.high = r.u8();
      m.version = VersionTag{r.u32()};
      return m;
    }
    case Kind::envelope: {
      Envelope m;
      m.src = r.u32();
      m.dst = r.u32();
      m.comm = get_comm(r);
      m.tag = r.i32();
      m.payload = r.blob();
      return m;
    }
    case Kind::marker: {
      Marker m;
      m.src = r.u32();
      m.ckpt_id = r.u32();
      return m;
    }
  }
  throw Error(Errc::unknown_kind, "kind " + std::to_string(static_cast<unsigned>(kind)));
}

}  // namespace

bool is_known_kind(std::uint8_t code) {
  return (code >= 0x01 && code <= 0x0E) || (code >= 0x10 && code <= 0x15) || code == 0x20 || code == 0x21;
}

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::join: return "JOIN";
    case Kind::join_ack: return "JOIN_ACK";
    case Kind::resize_req: return "RESIZE_REQ";
    case Kind::fork_req: return "FORK_REQ";
    case Kind::spawn_req: return "SPAWN_REQ";
    case Kind::ckpt_req: return "CKPT_REQ";
    case Kind::ckpt_image: return "CKPT_IMAGE";
    case Kind::epoch_commit: return "EPOCH_COMMIT";
    case Kind::world_resized_notify: return "WORLD_RESIZED_NOTIFY";
    case Kind::barrier_enter: return "BARRIER_ENTER";
    case Kind::barrier_release: return "BARRIER_RELEASE";
    case Kind::status_req: return "STATUS_REQ";
    case Kind::status_rep: return "STATUS_REP";
    case Kind::finalize: return "FINALIZE";
    case Kind::reply: return "REPLY";
    case Kind::pending_cleared: return "PENDING_CLEARED";
    case Kind::rank_exit: return "RANK_EXIT";
    case Kind::launch: return "LAUNCH";
    case Kind::ckpt_world_req: return "CKPT_WORLD_REQ";
    case Kind::merge_enter: return "MERGE_ENTER";
    case Kind::envelope: return "ENVELOPE";
    case Kind::marker: return "MARKER";
  }
  return "?";
}

Bytes encode_frame(const Frame& frame) {
  ByteWriter w;
  if (frame.body.size() >= kLatestVersion) throw Error(Errc::oversize, "frame body too large");
  w.u32(static_cast<std::uint32_t>(frame.body.size() + 1));
  w.u8(static_cast<std::uint8_t>(frame.kind));
  w.raw(frame.body);
  return std::move(w).take();
}

Frame decode_frame(std::span<const std::byte> in, std::uint32_t max_frame) {
  ByteReader r(in);
  auto length = r.u32();
  if (length == 0) throw Error(Errc::malformed_frame, "zero-length frame has no kind byte");
  if (length > max_frame) {
    throw Error(Errc::oversize, "declared length " + std::to_string(length) + " exceeds cap");
  }
  if (r.remaining() < length) {
    throw Error(Errc::malformed_frame, "declared length " + std::to_string(length) + " but " +
                                           std::to_string(r.remaining()) + " bytes follow");
  }
  auto code = r.u8();
  if (!is_known_kind(code)) throw Error(Errc::unknown_kind, "kind " + std::to_string(code));
  auto body = r.raw(length - 1);
  r.expect_done();
  return Frame{static_cast<Kind>(code), Bytes(body.begin(), body.end())};
}

void FrameDecoder::feed(std::span<const std::byte> data) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), data.begin(), data.end());
}

std::optional<Frame> FrameDecoder::next() {
  std::span<const std::byte> avail(buf_.data() + pos_, buf_.size() - pos_);
  if (avail.size() < 4) return std::nullopt;
  ByteReader r(avail);
  auto length = r.u32();
  if (length == 0) throw Error(Errc::malformed_frame, "zero-length frame has no kind byte");
  if (length > max_frame_) {
    throw Error(Errc::oversize, "declared length " + std::to_string(length) + " exceeds cap");
  }
  if (avail.size() < 5) return std::nullopt;
  auto code = r.u8();
  if (!is_known_kind(code)) throw Error(Errc::unknown_kind, "kind " + std::to_string(code));
  if (avail.size() < 4 + std::size_t{length}) return std::nullopt;
  auto body = avail.subspan(5, length - 1);
  Frame f{static_cast<Kind>(code), Bytes(body.begin(), body.end())};
  pos_ += 4 + std::size_t{length};
  if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  return f;
}

Kind kind_of(const Message& msg) {
  static constexpr Kind kKinds[] = {
      Kind::join,          Kind::join_ack,        Kind::resize_req,     Kind::fork_req,
      Kind::spawn_req,     Kind::ckpt_req,        Kind::ckpt_image,     Kind::epoch_commit,
      Kind::world_resized_notify, Kind::barrier_enter, Kind::barrier_release, Kind::status_req,
      Kind::status_rep,    Kind::finalize,        Kind::reply,          Kind::pending_cleared,
      Kind::rank_exit,     Kind::launch,          Kind::ckpt_world_req, Kind::merge_enter,
      Kind::envelope,      Kind::marker,
  };
  static_assert(std::size(kKinds) == std::variant_size_v<Message>);
  return kKinds[msg.index()];
}

Frame to_frame(const Message& msg) {
  ByteWriter w;
  put_body(w, msg);
  return Frame{kind_of(msg), std::move(w).take()};
}

Message from_frame(const Frame& frame) {
  ByteReader r(frame.body);
  Message m = get_body(frame.kind, r);
  r.expect_done();
  return m;
}

Bytes encode(const Message& msg) { return encode_frame(to_frame(msg)); }

Message decode(std::span<const std::byte> in, std::uint32_t max_frame) {
  return from_frame(decode_frame(in, max_frame));
}

void put_view(ByteWriter& w, const WorldView& v) {
  w.u32(v.version.value);
  w.u32(v.size);
  w.u8(static_cast<std::uint8_t>(v.origin));
  w.u32(static_cast<std::uint32_t>(v.endpoints.size()));
  for (const auto& e : v.endpoints) put_endpoint(w, e);
  w.u32_list(v.parents);
  w.u32_list(v.children);
  w.u32_list(v.merged_order);
}

WorldView get_view(ByteReader& r) {
  WorldView v;
  v.version = VersionTag{r.u32()};
  v.size = r.u32();
  v.origin = get_enum<ViewOrigin>(r, 3, "view origin");
  auto n = r.u32();
  if (r.remaining() / 6 < n) throw Error(Errc::malformed_frame, "endpoint table longer than input");
  v.endpoints.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) v.endpoints.push_back(get_endpoint(r));
  v.parents = r.u32_list();
  v.children = r.u32_list();
  v.merged_order = r.u32_list();
  return v;
}

void put_history(ByteWriter& w, const WorldHistory& h) {
  w.u32(static_cast<std::uint32_t>(h.size()));
  for (const auto& v : h.views()) put_view(w, v);
}

WorldHistory get_history(ByteReader& r) {
  auto n = r.u32();
  WorldHistory h;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto v = get_view(r);
    try {
      h.commit(std::move(v));
    } catch (const Error& e) {
      throw Error(Errc::malformed_frame, std::string("invalid history: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw Error(Errc::malformed_frame, std::string("invalid view: ") + e.what());
    }
  }
  return h;
}

Bytes encode_history(const WorldHistory& h) {
  ByteWriter w;
  put_history(w, h);
  return std::move(w).take();
}

WorldHistory decode_history(std::span<const std::byte> in) {
  ByteReader r(in);
  auto h = get_history(r);
  r.expect_done();
  return h;
}

Reply error_reply(Errc code, const std::string& text) {
  return Reply{kErrorReplyBase - static_cast<std::int32_t>(code), text};
}

std::optional<Errc> reply_error(const Reply& r) {
  if (r.code > kErrorReplyBase) return std::nullopt;
  auto idx = kErrorReplyBase - r.code;
  if (idx > static_cast<std::int32_t>(Errc::io_error)) return Errc::io_error;
  return static_cast<Errc>(idx);
}

void throw_if_error(const Reply& r) {
  if (auto e = reply_error(r)) throw Error(*e, r.text);
}

}  // namespace elastic::wire
