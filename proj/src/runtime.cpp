#include "elastic/runtime.hpp"

#include <fcntl.h>
#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <spdlog/spdlog.h>

#include "elastic/net.hpp"
#include "elastic/wire.hpp"

namespace elastic {

namespace {

std::atomic<bool> g_process_initialized{false};

std::optional<std::string> getenv_str(const char* name) {
  const char* v = std::getenv(name);
  if (!v) return std::nullopt;
  return std::string(v);
}

std::uint32_t parse_u32(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    auto v = std::stoul(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::uint32_t>(v);
  } catch (const std::exception&) {
    throw Error(Errc::not_initialized, std::string("bad value for ") + what + ": '" + text + "'");
  }
}

VersionTag parse_tag(const std::string& text, const char* what) {
  std::string digits = !text.empty() && text[0] == 'v' ? text.substr(1) : text;
  return VersionTag{parse_u32(digits, what)};
}

using BarrierKey = std::pair<std::uint8_t, std::uint32_t>;  // (family, concrete version)
using ReleaseKey = std::tuple<std::uint8_t, std::uint32_t, std::uint32_t>;

BarrierKey key_of(const CommRef& resolved) {
  return {static_cast<std::uint8_t>(resolved.family()), resolved.version()->value};
}

// Runtime metadata keys stored in world checkpoint images.
constexpr const char* kMetaHistory = "runtime.history";
constexpr const char* kMetaInbox = "runtime.inbox";
constexpr const char* kMetaBarriers = "runtime.barriers";
constexpr const char* kMetaNotices = "runtime.notices";

}  // namespace

namespace {

template <class Lookup>
Environment environment_from(Lookup get) {
  Environment e;
  auto ctl = get(env_vars::controller);
  if (!ctl) throw Error(Errc::not_initialized, std::string(env_vars::controller) + " is not set");
  e.controller = Endpoint::parse(*ctl);
  if (auto v = get(env_vars::rank)) e.rank = parse_u32(*v, env_vars::rank);
  if (auto v = get(env_vars::world_size)) e.world_size = parse_u32(*v, env_vars::world_size);
  if (auto v = get(env_vars::epoch)) e.epoch = parse_tag(*v, env_vars::epoch);
  if (auto v = get(env_vars::pending)) e.pending = *v == "1";
  if (auto v = get(env_vars::restore); v && !v->empty()) e.restore_image = *v;
  if (auto v = get(env_vars::fork_m)) e.fork_m = parse_u32(*v, env_vars::fork_m);
  if (auto v = get(env_vars::spawned)) e.spawned = *v == "1";
  if (auto v = get(env_vars::config)) e.config_path = *v;
  if (auto v = get(env_vars::connect_timeout)) {
    e.connect_timeout = std::chrono::milliseconds(parse_u32(*v, env_vars::connect_timeout));
  }
  if (auto v = get(env_vars::launch_id)) e.launch_id = parse_u32(*v, env_vars::launch_id);
  return e;
}

}  // namespace

Environment Environment::from_process() { return environment_from(getenv_str); }

Environment Environment::from_variables(const std::vector<std::pair<std::string, std::string>>& vars) {
  return environment_from([&vars](const char* name) -> std::optional<std::string> {
    for (const auto& [k, v] : vars) {
      if (k == name) return v;
    }
    return std::nullopt;
  });
}

std::vector<std::pair<std::string, std::string>> Environment::to_variables() const {
  std::vector<std::pair<std::string, std::string>> out{
      {env_vars::rank, std::to_string(rank)},
      {env_vars::world_size, std::to_string(world_size)},
      {env_vars::controller, controller.str()},
      {env_vars::epoch, epoch.str()},
      {env_vars::pending, pending ? "1" : "0"},
      {env_vars::connect_timeout, std::to_string(connect_timeout.count())},
      {env_vars::launch_id, std::to_string(launch_id)},
  };
  if (restore_image) out.emplace_back(env_vars::restore, *restore_image);
  if (fork_m) out.emplace_back(env_vars::fork_m, std::to_string(fork_m));
  if (spawned) out.emplace_back(env_vars::spawned, "1");
  if (!config_path.empty()) out.emplace_back(env_vars::config, config_path);
  return out;
}

struct Runtime::Impl {
  Environment env;
  ckpt::HookRegistry hooks;
  bool initialized = false;
  bool finalized = false;
  bool restored = false;
  bool joined_late = false;
  bool fork_child = false;
  bool fork_zero_pending = false;  // a fork child's first fork() call returns 0
  Rank rank = 0;
  WorldHistory history;
  ckpt::Metadata metadata;
  std::optional<Bytes> state;
  std::optional<InterComm> parent;

  // Application-thread bookkeeping.
  std::map<BarrierKey, std::uint32_t> barrier_seq;
  std::deque<VersionTag> notices;
  std::set<ReleaseKey> released;
  std::deque<wire::Reply> replies;
  std::optional<VersionTag> cleared;
  std::optional<WorldHistory> join_history;
  std::map<Rank, net::Link> peers;

  net::Listener listener;
  net::Link control;

  // Shared with the receiver thread.
  std::mutex mu;
  std::condition_variable cv;
  std::deque<wire::Message> control_q;
  std::deque<wire::Envelope> inbox;
  std::map<std::uint32_t, std::set<Rank>> markers;
  bool lost = false;

  std::thread receiver;
  net::Fd wake_r, wake_w;
  std::atomic<bool> in_call{false};

  ~Impl() { stop_receiver(); }

  // ---- receiver thread ----------------------------------------------------

  void start_receiver() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(Errc::io_error, "pipe");
    wake_r = net::Fd(fds[0]);
    wake_w = net::Fd(fds[1]);
    receiver = std::thread([this] { receive_loop(); });
  }

  void stop_receiver() {
    if (!receiver.joinable()) return;
    char b = 1;
    [[maybe_unused]] auto n = ::write(wake_w.get(), &b, 1);
    receiver.join();
  }

  void push_peer_message(wire::Message&& msg) {
    std::lock_guard lk(mu);
    if (auto* e = std::get_if<wire::Envelope>(&msg)) {
      inbox.push_back(std::move(*e));
    } else if (auto* m = std::get_if<wire::Marker>(&msg)) {
      markers[m->ckpt_id].insert(m->src);
    }
    cv.notify_all();
  }

  void receive_loop() {
    std::vector<net::Link> inbound;
    bool control_open = true;
    for (;;) {
      std::vector<pollfd> fds;
      fds.push_back({wake_r.get(), POLLIN, 0});
      fds.push_back({control_open ? control.fd() : -1, POLLIN, 0});
      fds.push_back({listener.fd(), POLLIN, 0});
      for (auto& l : inbound) fds.push_back({l.fd(), POLLIN, 0});
      if (::poll(fds.data(), fds.size(), -1) < 0) {
        if (errno == EINTR) continue;
        return;
      }
      if (fds[0].revents) return;
      if (fds[1].revents) {
        bool ok = false;
        try {
          ok = control.pump();
          while (auto m = control.next()) {
            std::lock_guard lk(mu);
            control_q.push_back(std::move(*m));
          }
        } catch (const Error& e) {
          spdlog::warn("rank {}: bad control frame: {}", rank, e.what());
          ok = false;
        }
        if (!ok) {
          control_open = false;
          std::lock_guard lk(mu);
          lost = true;
        }
        cv.notify_all();
      }
      if (fds[2].revents & POLLIN) {
        try {
          inbound.push_back(listener.accept());
        } catch (const Error& e) {
          spdlog::warn("rank {}: accept failed: {}", rank, e.what());
        }
      }
      std::vector<std::size_t> dead;
      for (std::size_t i = 0; i + 3 < fds.size(); ++i) {
        if (!fds[i + 3].revents) continue;
        bool ok = false;
        try {
          ok = inbound[i].pump();
          while (auto m = inbound[i].next()) push_peer_message(std::move(*m));
        } catch (const Error& e) {
          spdlog::warn("rank {}: bad peer frame: {}", rank, e.what());
          ok = false;
        }
        if (!ok) dead.push_back(i);
      }
      for (auto it = dead.rbegin(); it != dead.rend(); ++it) inbound.erase(inbound.begin() + *it);
    }
  }

  // ---- application-thread control processing ------------------------------

  void handle(wire::Message& msg) {
    std::visit(
        [this, &msg](auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, wire::JoinAck>) {
            join_history = std::move(m.history);
          } else if constexpr (std::is_same_v<T, wire::EpochCommit>) {
            if (!history.empty() && m.view.version <= history.latest_version()) return;
            history.commit(std::move(m.view));
          } else if constexpr (std::is_same_v<T, wire::WorldResizedNotify>) {
            if (std::find(notices.begin(), notices.end(), m.version) == notices.end()) {
              notices.push_back(m.version);
            }
          } else if constexpr (std::is_same_v<T, wire::PendingCleared>) {
            std::erase(notices, m.version);
            cleared = m.version;
            spdlog::info("rank {}: pending {} cleared: {}", rank, m.version.str(), m.reason);
          } else if constexpr (std::is_same_v<T, wire::BarrierRelease>) {
            released.insert({static_cast<std::uint8_t>(m.comm.family()), m.comm.version()->value, m.seq});
          } else if constexpr (std::is_same_v<T, wire::Reply>) {
            replies.push_back(std::move(m));
          } else if constexpr (std::is_same_v<T, wire::CkptReq>) {
            take_checkpoint(m);
          } else {
            spdlog::debug("rank {}: ignoring control message {}", rank, wire::kind_name(wire::kind_of(msg)));
          }
        },
        msg);
  }

  /// Processes control traffic until `done` (evaluated under the lock) holds.
  template <class Pred>
  void wait_until(Pred done) {
    std::unique_lock lk(mu);
    for (;;) {
      if (!control_q.empty()) {
        auto batch = std::move(control_q);
        control_q.clear();
        lk.unlock();
        for (auto& m : batch) handle(m);
        lk.lock();
        continue;
      }
      if (done()) return;
      if (lost) throw Error(Errc::disconnected, "controller link lost");
      cv.wait(lk);
    }
  }

  void drain() {
    wait_until([] { return true; });
  }

  Status take_notice() {
    drain();
    if (notices.empty()) return Status::ok;
    notices.pop_front();
    return Status::world_resized;
  }

  wire::Reply wait_reply() {
    wait_until([this] { return !replies.empty(); });
    auto r = std::move(replies.front());
    replies.pop_front();
    return r;
  }

  void send_control(const wire::Message& m) {
    try {
      control.send(m);
    } catch (const Error&) {
      throw Error(Errc::disconnected, "controller link lost");
    }
  }

  net::Link& peer(Rank dst) {
    auto it = peers.find(dst);
    if (it != peers.end()) return it->second;
    const auto& eps = history.latest().endpoints;
    if (dst >= eps.size()) throw Error(Errc::rank_out_of_range, "no endpoint for rank " + std::to_string(dst));
    auto link = net::connect(eps[dst], env.connect_timeout);
    return peers.emplace(dst, std::move(link)).first->second;
  }

  void send_peer(Rank dst, const wire::Message& m) {
    try {
      peer(dst).send(m);
    } catch (const Error& e) {
      if (e.code() != Errc::disconnected) throw;
      peers.erase(dst);
      throw Error(Errc::disconnected, "link to rank " + std::to_string(dst) + " lost");
    }
  }

  // ---- checkpoint ---------------------------------------------------------

  ckpt::Metadata base_metadata() const {
    ckpt::Metadata m = metadata;
    m[ckpt::keys::rank] = std::to_string(rank);
    m[ckpt::keys::world_size] = std::to_string(history.empty() ? env.world_size : history.latest().size);
    m[ckpt::keys::epoch] = (history.empty() ? env.epoch : history.latest_version()).str();
    m[ckpt::keys::pending] = "0";
    m[ckpt::keys::controller] = env.controller.str();
    m[ckpt::keys::config_path] = env.config_path;
    for (auto k : {kMetaHistory, kMetaInbox, kMetaBarriers, kMetaNotices}) m.erase(k);
    return m;
  }

  void add_world_metadata(ckpt::Metadata& m) {
    m[kMetaHistory] = to_hex(wire::encode_history(history));
    Bytes inbox_bytes;
    {
      std::lock_guard lk(mu);
      for (const auto& e : inbox) {
        auto b = wire::encode(e);
        inbox_bytes.insert(inbox_bytes.end(), b.begin(), b.end());
      }
    }
    m[kMetaInbox] = to_hex(inbox_bytes);
    std::ostringstream bs;
    for (const auto& [k, seq] : barrier_seq) bs << int(k.first) << ':' << k.second << ':' << seq << ' ';
    m[kMetaBarriers] = bs.str();
    std::ostringstream ns;
    for (auto v : notices) ns << v.value << ' ';
    m[kMetaNotices] = ns.str();
  }

  void take_checkpoint(const wire::CkptReq& req) {
    if (req.mode == wire::CkptMode::world) {
      // Quiesce: a marker travels behind every envelope already sent on each link.
      auto members = elastic::membership(history, CommRef::world());
      for (Rank r : members) {
        if (r != rank) send_peer(r, wire::Marker{rank, req.ckpt_id});
      }
      std::size_t expect = members.size() - 1;
      std::unique_lock lk(mu);
      cv.wait(lk, [&] { return lost || markers[req.ckpt_id].size() >= expect; });
      markers.erase(req.ckpt_id);
      if (lost) throw Error(Errc::disconnected, "controller link lost");
    }
    auto meta = base_metadata();
    if (req.mode == wire::CkptMode::world) add_world_metadata(meta);
    Bytes image;
    try {
      auto img = ckpt::snapshot(state.value_or(Bytes{}), std::move(meta), &hooks);
      if (state) state = img.payload;
      image = ckpt::encode_image(img);
    } catch (const Error& e) {
      spdlog::error("rank {}: checkpoint failed: {}", rank, e.what());
    }
    send_control(wire::CkptImage{rank, req.ckpt_id, std::move(image)});
  }

  void load_world_metadata(const ckpt::Metadata& meta) {
    if (auto it = meta.find(kMetaInbox); it != meta.end() && !it->second.empty()) {
      wire::FrameDecoder dec;
      dec.feed(from_hex(it->second));
      while (auto f = dec.next()) {
        auto msg = wire::from_frame(*f);
        if (auto* e = std::get_if<wire::Envelope>(&msg)) inbox.push_back(std::move(*e));
      }
    }
    if (auto it = meta.find(kMetaBarriers); it != meta.end()) {
      std::istringstream is(it->second);
      std::string item;
      while (is >> item) {
        unsigned fam = 0, ver = 0, seq = 0;
        if (std::sscanf(item.c_str(), "%u:%u:%u", &fam, &ver, &seq) == 3) {
          barrier_seq[{static_cast<std::uint8_t>(fam), ver}] = seq;
        }
      }
    }
    if (auto it = meta.find(kMetaNotices); it != meta.end()) {
      std::istringstream is(it->second);
      std::uint32_t v = 0;
      while (is >> v) notices.push_back(VersionTag{v});
    }
  }

  // ---- call helpers -------------------------------------------------------

  void check_live() const {
    if (finalized) throw Error(Errc::disconnected, "runtime finalized");
    if (!initialized) throw Error(Errc::not_initialized, "runtime not initialized");
  }

  /// Concrete communicator plus its members; the caller must belong to it.
  std::pair<CommRef, std::vector<Rank>> resolve(const CommRef& comm) const {
    if (comm.is_null()) throw Error(Errc::null_communicator, "communicator is NULL");
    CommRef r = resolve_default_version(history, comm);
    auto members = elastic::membership(history, r);
    if (std::find(members.begin(), members.end(), rank) == members.end()) {
      throw Error(Errc::null_communicator, "rank " + std::to_string(rank) + " is not in " + r.str());
    }
    return {r, std::move(members)};
  }

  static void require_member(const std::vector<Rank>& members, Rank r, const CommRef& comm) {
    if (std::find(members.begin(), members.end(), r) == members.end()) {
      throw Error(Errc::rank_out_of_range, "rank " + std::to_string(r) + " is not in " + comm.str());
    }
  }

  bool envelope_matches(const wire::Envelope& e, Rank src, std::int32_t tag, const CommRef& resolved) const {
    if (e.src != src || e.tag != tag || e.comm.is_null()) return false;
    if (e.comm.family() != resolved.family()) return false;
    return e.comm.is_latest() || e.comm.version() == resolved.version();
  }
};

namespace {

/// Flags a second concurrent caller on one handle.
class CallGuard {
 public:
  explicit CallGuard(std::atomic<bool>& flag) : flag_(flag) {
    if (flag_.exchange(true)) throw std::logic_error("concurrent calls on one runtime handle");
  }
  ~CallGuard() { flag_ = false; }
  CallGuard(const CallGuard&) = delete;
  CallGuard& operator=(const CallGuard&) = delete;

 private:
  std::atomic<bool>& flag_;
};

}  // namespace

Runtime::Runtime() : impl_(std::make_unique<Impl>()) {}

Runtime::~Runtime() {
  try {
    finalize();
  } catch (const std::exception& e) {
    spdlog::warn("finalize during destruction failed: {}", e.what());
  }
}

ckpt::HookRegistry& Runtime::hooks() { return impl_->hooks; }

void Runtime::init() {
  if (g_process_initialized.exchange(true)) throw Error(Errc::duplicate_init, "init already called in this process");
  init(Environment::from_process());
}

void Runtime::init(const Environment& env) {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  if (s.initialized || s.finalized) throw Error(Errc::duplicate_init, "handle already initialized");
  s.env = env;
  s.rank = env.rank;
  s.metadata = s.base_metadata();

  Bytes scratch;
  ckpt::HookContext init_ctx{s.metadata, s.state ? *s.state : scratch};
  s.hooks.run(ckpt::Phase::init, init_ctx);

  if (env.restore_image) {
    auto image = ckpt::read_image_file(*env.restore_image);
    ckpt::Metadata overrides{
        {ckpt::keys::rank, std::to_string(env.rank)},
        {ckpt::keys::world_size, std::to_string(env.world_size)},
        {ckpt::keys::epoch, env.epoch.str()},
        {ckpt::keys::pending, env.pending ? "1" : "0"},
    };
    if (image.metadata.contains(ckpt::keys::controller)) overrides[ckpt::keys::controller] = env.controller.str();
    if (image.metadata.contains(ckpt::keys::config_path)) overrides[ckpt::keys::config_path] = env.config_path;
    auto restored = ckpt::restore(image, overrides, &s.hooks);
    s.state = std::move(restored.state);
    s.metadata = std::move(restored.metadata);
    s.restored = true;
    if (env.fork_m == 0) s.load_world_metadata(s.metadata);
  }
  if (env.fork_m > 0) {
    s.fork_child = true;
    s.fork_zero_pending = true;
  }

  s.listener = net::Listener::bind();
  s.control = net::connect(env.controller, env.connect_timeout);
  std::uint8_t flags = 0;
  if (env.pending) flags |= wire::join_flags::pending;
  if (s.restored) flags |= wire::join_flags::restored;
  if (env.spawned) flags |= wire::join_flags::spawned;
  s.control.send(wire::Join{wire::Role::rank, env.rank, s.listener.endpoint(), flags, env.launch_id});
  s.start_receiver();

  s.wait_until([&s] { return s.join_history.has_value(); });
  s.history = std::move(*s.join_history);
  s.join_history.reset();

  if (env.pending) {
    // New ranks enter the commit barrier from init and leave with the new epoch.
    s.joined_late = true;
    auto comm = CommRef::world(env.epoch);
    s.send_control(wire::BarrierEnter{comm, wire::kCommitSeq, s.rank});
    ReleaseKey key{static_cast<std::uint8_t>(Family::world), env.epoch.value, wire::kCommitSeq};
    s.wait_until([&s, &key, &env] { return s.released.contains(key) || s.cleared == env.epoch; });
    if (!s.released.contains(key)) {
      s.stop_receiver();
      s.finalized = true;
      throw Error(Errc::spawn_aborted, "epoch " + env.epoch.str() + " was abandoned before commit");
    }
    s.released.erase(key);
  }
  if (env.spawned && s.history.latest().origin == ViewOrigin::spawn_merge) {
    const auto& view = s.history.latest();
    std::uint32_t old_n = view.version.value > 0 ? s.history.at(VersionTag{view.version.value - 1}).size : 0;
    InterComm ic;
    for (Rank r = old_n; r < view.size; ++r) ic.local_group.push_back(r);
    for (Rank r = 0; r < old_n; ++r) ic.remote_group.push_back(r);
    ic.version = view.version;
    ic.parent_side = false;
    s.parent = std::move(ic);
  }
  s.metadata = s.base_metadata();
  s.initialized = true;
  spdlog::debug("rank {}: initialized at {} size {}", s.rank, s.history.latest_version().str(),
                s.history.latest().size);
}

bool Runtime::initialized() const { return impl_->initialized && !impl_->finalized; }
Rank Runtime::rank() const { return impl_->rank; }

std::uint32_t Runtime::size() const {
  impl_->check_live();
  return impl_->history.latest().size;
}

VersionTag Runtime::version() const {
  impl_->check_live();
  return impl_->history.latest_version();
}

const WorldHistory& Runtime::history() const { return impl_->history; }
bool Runtime::restored() const { return impl_->restored; }
bool Runtime::joined_late() const { return impl_->joined_late; }
bool Runtime::fork_child() const { return impl_->fork_child; }
const ckpt::Metadata& Runtime::metadata() const { return impl_->metadata; }

Status Runtime::send(Rank dst, std::int32_t tag, std::span<const std::byte> payload, const CommRef& comm) {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  s.check_live();
  s.drain();
  auto [resolved, members] = s.resolve(comm);
  Impl::require_member(members, dst, resolved);
  if (dst == s.rank) throw Error(Errc::self_send, "send to own rank " + std::to_string(dst));
  s.send_peer(dst, wire::Envelope{s.rank, dst, comm, tag, Bytes(payload.begin(), payload.end())});
  return s.take_notice();
}

RecvResult Runtime::recv(Rank src, std::int32_t tag, const CommRef& comm) {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  s.check_live();
  s.drain();
  auto [resolved, members] = s.resolve(comm);
  Impl::require_member(members, src, resolved);
  if (src == s.rank) throw Error(Errc::self_send, "receive from own rank " + std::to_string(src));
  RecvResult out;
  s.wait_until([&] {
    auto it = std::find_if(s.inbox.begin(), s.inbox.end(),
                           [&](const wire::Envelope& e) { return s.envelope_matches(e, src, tag, resolved); });
    if (it == s.inbox.end()) return false;
    out.payload = std::move(it->payload);
    s.inbox.erase(it);
    return true;
  });
  out.status = s.take_notice();
  return out;
}

Status Runtime::barrier(const CommRef& comm) {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  s.check_live();
  s.drain();
  auto [resolved, members] = s.resolve(comm);
  auto key = key_of(resolved);
  std::uint32_t seq = s.barrier_seq[key]++;
  s.send_control(wire::BarrierEnter{resolved, seq, s.rank});
  ReleaseKey rk{key.first, key.second, seq};
  s.wait_until([&] { return s.released.contains(rk) || !s.replies.empty(); });
  if (!s.released.contains(rk)) {
    auto r = std::move(s.replies.front());
    s.replies.pop_front();
    wire::throw_if_error(r);
    throw Error(Errc::stray_enter, "unexpected reply to barrier: " + r.text);
  }
  s.released.erase(rk);
  return s.take_notice();
}

CommRef Runtime::resized_world() {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  s.check_live();
  s.drain();
  return resolve_default_version(s.history, CommRef::resized_world());
}

InterComm Runtime::comm_spawn(const std::vector<std::string>& command, std::uint32_t maxprocs, Rank root,
                              const CommRef& comm) {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  s.check_live();
  s.drain();
  auto [resolved, members] = s.resolve(comm);
  if (resolved.family() != Family::world || resolved.version() != s.history.latest_version()) {
    throw Error(Errc::not_collective, "comm_spawn must be collective over the latest WORLD");
  }
  Impl::require_member(members, root, resolved);
  if (maxprocs == 0) throw Error(Errc::spawn_failed, "maxprocs must be positive");
  s.send_control(wire::SpawnReq{maxprocs, command, root, s.rank});
  auto reply = s.wait_reply();
  wire::throw_if_error(reply);
  InterComm ic;
  ic.local_group = members;
  auto n = s.history.latest().size;
  for (Rank r = n; r < n + maxprocs; ++r) ic.remote_group.push_back(r);
  ic.version = s.history.latest_version().next();
  ic.parent_side = true;
  return ic;
}

CommRef Runtime::intercomm_merge(const InterComm& inter, int high) {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  s.check_live();
  s.drain();
  if (inter.parent_side) {
    s.send_control(wire::MergeEnter{s.rank, static_cast<std::uint8_t>(high ? 1 : 0), inter.version});
    wire::throw_if_error(s.wait_reply());
  }
  if (s.history.latest_version() < inter.version) {
    throw Error(Errc::spawn_aborted, "merge epoch " + inter.version.str() + " never committed");
  }
  return CommRef::resized_world(inter.version);
}

std::optional<InterComm> Runtime::parent() const { return impl_->parent; }

int Runtime::fork(std::uint32_t m) {
  auto& s = *impl_;
  CallGuard guard(s.in_call);
  s.check_live();
  if (!s.state) throw Error(Errc::state_not_registered, "fork needs a registered state");
  if (s.fork_zero_pending) {
    s.fork_zero_pending = false;
    return 0;
  }
  s.drain();
  s.send_control(wire::ForkReq{m, s.rank});
  auto reply = s.wait_reply();
  wire::throw_if_error(reply);
  return reply.code;
}

CommRef Runtime::comm_parents() const {
  impl_->check_live();
  return resolve_default_version(impl_->history, CommRef::parents());
}

CommRef Runtime::comm_children() const {
  impl_->check_live();
  return resolve_default_version(impl_->history, CommRef::children());
}

std::vector<Rank> Runtime::membership(const CommRef& comm) const {
  impl_->check_live();
  return elastic::membership(impl_->history, comm);
}

void Runtime::register_state(Bytes blob) {
  impl_->check_live();
  impl_->state = std::move(blob);
}

void Runtime::replace_state(Bytes blob) {
  impl_->check_live();
  if (!impl_->state) throw Error(Errc::state_not_registered, "replace_state before register_state");
  impl_->state = std::move(blob);
}

const Bytes& Runtime::state() const {
  if (!impl_->state) throw Error(Errc::state_not_registered, "no state registered");
  return *impl_->state;
}

bool Runtime::has_state() const { return impl_->state.has_value(); }

void Runtime::finalize() {
  auto& s = *impl_;
  if (!s.initialized || s.finalized) return;
  s.finalized = true;
  try {
    s.control.send(wire::Finalize{s.rank});
  } catch (const Error& e) {
    spdlog::debug("rank {}: finalize notice not delivered: {}", s.rank, e.what());
  }
  s.stop_receiver();
  s.peers.clear();
  s.control.close();
}

}  // namespace elastic
