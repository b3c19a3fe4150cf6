#include "elastic/controller.hpp"

#include <fcntl.h>
#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <tuple>

#include <spdlog/spdlog.h>

#include "elastic/checkpoint.hpp"
#include "elastic/job.hpp"
#include "elastic/net.hpp"
#include "elastic/orchestrator.hpp"
#include "elastic/process.hpp"
#include "elastic/runtime.hpp"

namespace elastic {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---- ProcessBackend ---------------------------------------------------------

ProcessBackend::ProcessBackend(fs::path head_exe, fs::path daemon_exe)
    : head_exe_(std::move(head_exe)), daemon_exe_(std::move(daemon_exe)) {}

void ProcessBackend::start_head(std::uint32_t node, const Endpoint& controller) {
  std::vector<std::string> argv{head_exe_.string(), "head",   "--controller",     controller.str(),
                                "--node",           std::to_string(node), "--daemon", daemon_exe_.string()};
  try {
    heads_[node] = proc::spawn(argv);
  } catch (const Error& e) {
    throw Error(Errc::launch_failed, "head: " + std::string(e.what()));
  }
}

void ProcessBackend::launch(const wire::Launch&) {
  throw Error(Errc::launch_failed, "process backend launches ranks through heads");
}

std::vector<std::uint32_t> ProcessBackend::reap_heads() {
  std::vector<std::uint32_t> dead;
  for (auto it = heads_.begin(); it != heads_.end();) {
    if (auto code = proc::try_wait(it->second)) {
      spdlog::debug("head of node {} exited with {}", it->first, *code);
      dead.push_back(it->first);
      it = heads_.erase(it);
    } else {
      ++it;
    }
  }
  return dead;
}

void ProcessBackend::shutdown(std::chrono::milliseconds grace) {
  for (auto& [node, pid] : heads_) proc::wait_or_kill(pid, grace);
  heads_.clear();
}

// ---- controller state -------------------------------------------------------

namespace {

using ConnId = std::uint64_t;

enum class ConnRole { unknown, rank, head, fault, client };

struct Conn {
  net::Link link;
  ConnRole role = ConnRole::unknown;
  std::uint32_t id = 0;  // rank or node
  std::uint32_t launch_id = 0;
  bool closed = false;
};

struct RankRec {
  std::uint32_t node = 0;
  std::uint32_t launch_id = 0;
  wire::RankState state = wire::RankState::launching;
  int exit_code = 0;
  std::optional<ConnId> conn;
  Endpoint ep;
  bool committed = false;  // member of the latest committed view
  bool aborted = false;    // launched for a plan that was abandoned
  bool finalized = false;
  bool joined = false;
};

enum class Driver { operator_request, restart, api, fork };

struct HeldBarrier {
  CommRef comm;
  std::uint32_t seq = 0;
};

struct Plan {
  GrowPlan grow;
  VersionTag version;
  Driver driver = Driver::operator_request;
  std::vector<std::string> command;
  std::set<Rank> commit_entered;
  std::optional<HeldBarrier> held;
  Clock::time_point deadline;
  std::uint32_t ckpt_id = 0;
  std::map<Rank, fs::path> images;  // fork clone images by source rank
  bool launched = false;
  bool spawn_replied = false;
  std::map<Rank, std::uint8_t> merge_entries;
};

struct CkptJob {
  std::uint32_t id = 0;
  ConnId requester = 0;
  Clock::time_point deadline;
  std::optional<HeldBarrier> held;
  std::map<Rank, Bytes> images;
  fs::path dir;
};

template <class Req>
struct Round {
  std::map<Rank, std::pair<ConnId, Req>> calls;
  Clock::time_point deadline;
};

bool contains(const std::vector<Rank>& v, Rank r) { return std::find(v.begin(), v.end(), r) != v.end(); }

}  // namespace

struct Controller::State {
  ControllerConfig cfg;
  Backend& backend;
  net::Listener listener;
  net::Fd wake_r, wake_w;
  std::map<ConnId, Conn> conns;
  ConnId next_conn = 1;
  std::uint32_t next_launch_id = 1;
  std::uint32_t next_ckpt_id = 1;

  bool launching = true;
  std::uint32_t n0 = 0;  // ranks launched at start (fresh or restored)
  WorldHistory history;  // fresh jobs: empty until every initial rank joined
  std::map<Rank, RankRec> ranks;
  std::map<std::uint32_t, ConnId> heads;
  std::map<std::uint32_t, std::vector<wire::Launch>> queued;  // per node, until its head joins
  std::map<Rank, fs::path> restore_images;
  Clock::time_point launch_deadline;

  std::optional<Plan> plan;
  std::optional<CkptJob> ckpt;
  Round<wire::ForkReq> fork_round;
  Round<wire::SpawnReq> spawn_round;
  BarrierService barriers;

  std::ofstream trace_out;
  std::optional<int> exit_code;
  std::string failure;
  int first_nonzero = 0;

  std::mutex posted_mu;
  std::vector<std::tuple<Rank, std::uint32_t, int>> posted_exits;
  std::atomic<bool> stop_requested{false};

  State(ControllerConfig c, Backend& b) : cfg(std::move(c)), backend(b) {}

  // ---- plumbing -------------------------------------------------------------

  void trace(const std::string& line) {
    spdlog::debug("[{}] {}", cfg.jobid, line);
    if (trace_out) {
      trace_out << line << '\n';
      trace_out.flush();
    }
  }

  void send(ConnId id, const wire::Message& msg) {
    auto it = conns.find(id);
    if (it == conns.end() || it->second.closed) return;
    try {
      it->second.link.send(msg);
    } catch (const Error& e) {
      spdlog::debug("send to connection {} failed: {}", id, e.what());
      it->second.closed = true;
    }
  }

  void send_rank(Rank r, const wire::Message& msg) {
    auto it = ranks.find(r);
    if (it != ranks.end() && it->second.conn) send(*it->second.conn, msg);
  }

  void fail(const std::string& reason) {
    if (exit_code) return;
    spdlog::error("[{}] {}", cfg.jobid, reason);
    trace("fail " + reason);
    failure = reason;
    exit_code = 1;
  }

  std::uint32_t world_size() const { return history.empty() ? n0 : history.latest().size; }

  std::vector<Rank> world_members() const {
    std::vector<Rank> out(world_size());
    std::iota(out.begin(), out.end(), Rank{0});
    return out;
  }

  std::vector<std::uint32_t> node_load() const {
    std::vector<std::uint32_t> load(cfg.nodes, 0);
    for (const auto& [r, rec] : ranks) {
      if (rec.committed && rec.state != wire::RankState::exited) ++load[rec.node];
    }
    return load;
  }

  Environment base_env(Rank r, std::uint32_t size, VersionTag epoch, bool pending) const {
    Environment e;
    e.rank = r;
    e.world_size = size;
    e.controller = listener.endpoint();
    e.epoch = epoch;
    e.pending = pending;
    e.config_path = job::config_path(cfg.run_dir, cfg.jobid, r).string();
    e.connect_timeout = cfg.rank_connect_timeout;
    return e;
  }

  void launch_rank(Rank r, std::uint32_t node, Environment env, const std::vector<std::string>& command) {
    RankRec rec;
    rec.node = node;
    rec.launch_id = next_launch_id++;
    env.launch_id = rec.launch_id;
    ranks[r] = rec;
    wire::Launch l{r, node, env.to_variables(), command.empty() ? cfg.command : command};
    trace("launch " + std::to_string(r) + " node " + std::to_string(node));
    if (!backend.uses_heads()) {
      backend.launch(l);
      return;
    }
    auto h = heads.find(node);
    if (h != heads.end()) {
      send(h->second, l);
    } else {
      queued[node].push_back(std::move(l));
    }
  }

  // ---- startup ----------------------------------------------------------------

  void prepare() {
    if (!job::valid_jobid(cfg.jobid)) throw Error(Errc::launch_failed, "invalid job id '" + cfg.jobid + "'");
    if (cfg.n < 1 || cfg.nodes < 1) throw Error(Errc::launch_failed, "need at least one rank and one node");
    if (cfg.restart_dir) {
      auto manifest = ckpt::read_manifest(*cfg.restart_dir);
      if (cfg.n < manifest.size) {
        throw Error(Errc::shrink_unsupported, "restart with " + std::to_string(cfg.n) + " ranks from a " +
                                                  std::to_string(manifest.size) + "-rank checkpoint");
      }
      auto image = ckpt::read_image_file(*cfg.restart_dir / manifest.files.at(0).second);
      auto it = image.metadata.find("runtime.history");
      if (it == image.metadata.end()) throw Error(Errc::manifest_invalid, "image carries no world history");
      history = wire::decode_history(from_hex(it->second));
      if (history.latest_version() != manifest.version || history.latest().size != manifest.size) {
        throw Error(Errc::manifest_invalid, "manifest disagrees with the recorded world history");
      }
      n0 = manifest.size;
      for (const auto& [r, file] : manifest.files) restore_images[r] = *cfg.restart_dir / file;
    } else {
      n0 = cfg.n;
    }
    listener = net::Listener::bind();
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC | O_NONBLOCK) != 0) throw Error(Errc::io_error, "pipe");
    wake_r = net::Fd(fds[0]);
    wake_w = net::Fd(fds[1]);
    fs::create_directories(cfg.run_dir);
    trace_out.open(job::trace_path(cfg.run_dir, cfg.jobid), std::ios::trunc);
    job::write_ctl(cfg.run_dir, cfg.jobid, listener.endpoint());
  }

  void start() {
    trace("controller " + listener.endpoint().str());
    launch_deadline = Clock::now() + cfg.launch_timeout;
    if (backend.uses_heads()) {
      for (std::uint32_t node = 0; node < cfg.nodes; ++node) {
        try {
          backend.start_head(node, listener.endpoint());
          trace("head-started " + std::to_string(node));
        } catch (const Error& e) {
          fail(std::string("LaunchFailed(head): ") + e.what());
          return;
        }
      }
    }
    auto nodes = place(std::vector<std::uint32_t>(cfg.nodes, 0), n0);
    VersionTag epoch = history.empty() ? VersionTag{} : history.latest_version();
    for (Rank r = 0; r < n0; ++r) {
      auto env = base_env(r, n0, epoch, false);
      if (auto it = restore_images.find(r); it != restore_images.end()) env.restore_image = it->second.string();
      launch_rank(r, nodes[r], env, cfg.command);
    }
  }

  void complete_launch() {
    if (history.empty()) {
      WorldView v;
      v.version = VersionTag{};
      v.size = n0;
      v.origin = ViewOrigin::initial;
      for (Rank r = 0; r < n0; ++r) v.endpoints.push_back(ranks[r].ep);
      history = WorldHistory(std::move(v));
    } else {
      for (Rank r = 0; r < n0; ++r) history.refresh_endpoint(r, ranks[r].ep);
    }
    job::write_configs(cfg.run_dir, cfg.jobid, history.latest());
    for (Rank r = 0; r < n0; ++r) {
      ranks[r].committed = true;
      send_rank(r, wire::JoinAck{history});
    }
    launching = false;
    trace("world-ready " + history.latest_version().str() + " size " + std::to_string(n0));
    if (cfg.restart_dir && cfg.n > n0) {
      try {
        start_plan(ViewOrigin::grow, cfg.n - n0, Driver::restart, cfg.command);
      } catch (const Error& e) {
        fail(std::string("restart grow: ") + e.what());
      }
    }
  }

  // ---- plans ------------------------------------------------------------------

  void start_plan(ViewOrigin kind, std::uint32_t m, Driver driver, std::vector<std::string> command) {
    if (launching) throw Error(Errc::resize_in_progress, "job is still launching");
    auto grow = plan_grow(world_size(), node_load(), kind, m, plan.has_value() || ckpt.has_value());
    Plan p;
    p.grow = std::move(grow);
    p.version = history.latest_version().next();
    p.driver = driver;
    p.command = std::move(command);
    p.deadline = Clock::now() + cfg.join_timeout;
    plan = std::move(p);
    trace("plan " + plan->version.str() + " " + std::string(origin_name(kind)) + " m=" + std::to_string(m));
    if (kind == ViewOrigin::fork) {
      plan->ckpt_id = next_ckpt_id++;
      for (Rank src : plan->grow.clone_sources) {
        send_rank(src, wire::CkptReq{src, wire::CkptMode::fork, plan->ckpt_id});
      }
      return;
    }
    for (Rank r : world_members()) send_rank(r, wire::WorldResizedNotify{plan->version});
    launch_new_ranks();
  }

  void launch_new_ranks() {
    auto& p = *plan;
    std::uint32_t n = world_size();
    std::uint32_t total = n + p.grow.m;
    for (std::size_t i = 0; i < p.grow.new_ranks.size(); ++i) {
      Rank r = p.grow.new_ranks[i];
      auto env = base_env(r, total, p.version, true);
      if (p.grow.kind == ViewOrigin::fork) {
        env.restore_image = p.images.at(p.grow.clone_sources[i]).string();
        env.fork_m = p.grow.m;
      }
      if (p.grow.kind == ViewOrigin::spawn_merge) env.spawned = true;
      launch_rank(r, p.grow.placements.at(r), env, p.command);
    }
    p.launched = true;
  }

  std::uint32_t joined_count() const {
    if (!plan) return 0;
    std::uint32_t old = plan->held ? world_size()
                                   : static_cast<std::uint32_t>(barriers.waiting_on(
                                         CommRef::world(history.latest_version())));
    if (plan->driver == Driver::fork || plan->driver == Driver::api) old = world_size();
    return old + static_cast<std::uint32_t>(plan->commit_entered.size());
  }

  void try_advance() {
    if (!plan) return;
    auto& p = *plan;
    bool all_joined = p.commit_entered.size() == p.grow.new_ranks.size();
    switch (p.driver) {
      case Driver::operator_request:
      case Driver::restart:
        if (all_joined && p.held) commit();
        break;
      case Driver::fork:
        if (all_joined) commit();
        break;
      case Driver::api:
        if (all_joined && !p.spawn_replied) {
          p.spawn_replied = true;
          p.deadline = Clock::now() + cfg.collective_timeout;
          for (Rank r : world_members()) send_rank(r, wire::Reply{0, "spawned"});
        }
        if (p.spawn_replied && p.merge_entries.size() == world_size()) commit();
        break;
    }
  }

  void release(const CommRef& comm, std::uint32_t seq, const std::vector<Rank>& members) {
    for (Rank r : members) send_rank(r, wire::BarrierRelease{comm, seq});
  }

  void commit() {
    Plan p = std::move(*plan);
    plan.reset();
    const WorldView& old = history.latest();
    std::uint32_t n = old.size;
    WorldView v;
    v.version = p.version;
    v.size = n + p.grow.m;
    v.origin = p.grow.kind;
    v.endpoints = old.endpoints;
    for (Rank r : p.grow.new_ranks) v.endpoints.push_back(ranks[r].ep);
    if (p.grow.kind == ViewOrigin::fork) {
      for (Rank r = 0; r < n; ++r) v.parents.push_back(r);
      v.children = p.grow.new_ranks;
    }
    if (p.grow.kind == ViewOrigin::spawn_merge) {
      std::uint8_t high = p.merge_entries.empty() ? 0 : p.merge_entries.begin()->second;
      std::vector<Rank> parents(n), children = p.grow.new_ranks;
      std::iota(parents.begin(), parents.end(), Rank{0});
      v.merged_order = high == 0 ? parents : children;
      auto& tail = high == 0 ? children : parents;
      v.merged_order.insert(v.merged_order.end(), tail.begin(), tail.end());
    }
    auto old_members = world_members();
    history.commit(v);
    job::write_configs(cfg.run_dir, cfg.jobid, v);
    trace("commit " + v.version.str() + " size " + std::to_string(v.size) + " origin " +
          std::string(origin_name(v.origin)));
    if (p.grow.kind == ViewOrigin::fork) {
      for (Rank r : old_members) send_rank(r, wire::WorldResizedNotify{v.version});
    }
    for (Rank r = 0; r < v.size; ++r) send_rank(r, wire::EpochCommit{v});
    for (Rank r : p.grow.new_ranks) ranks[r].committed = true;
    if (p.held) release(p.held->comm, p.held->seq, old_members);
    release(CommRef::world(v.version), wire::kCommitSeq, p.grow.new_ranks);
    if (p.driver == Driver::fork) {
      for (Rank r : old_members) send_rank(r, wire::Reply{static_cast<std::int32_t>(p.grow.m), "forked"});
    } else if (p.driver == Driver::api) {
      for (Rank r : old_members) send_rank(r, wire::Reply{0, "merged"});
    }
  }

  void abort_plan(const std::string& reason) {
    Plan p = std::move(*plan);
    plan.reset();
    trace("abort " + p.version.str() + " " + reason);
    spdlog::warn("[{}] pending {} abandoned: {}", cfg.jobid, p.version.str(), reason);
    auto old_members = world_members();
    for (Rank r : p.grow.new_ranks) {
      auto it = ranks.find(r);
      if (it == ranks.end()) continue;
      it->second.aborted = true;
      if (it->second.conn) send(*it->second.conn, wire::PendingCleared{p.version, reason});
    }
    for (Rank r : old_members) send_rank(r, wire::PendingCleared{p.version, reason});
    if (p.held) release(p.held->comm, p.held->seq, old_members);
    switch (p.driver) {
      case Driver::fork:
        for (Rank r : old_members) send_rank(r, wire::Reply{-3, reason});
        break;
      case Driver::api:
        if (!p.spawn_replied) {
          for (Rank r : old_members) send_rank(r, wire::error_reply(Errc::spawn_failed, reason));
        } else {
          for (const auto& [r, high] : p.merge_entries) send_rank(r, wire::error_reply(Errc::spawn_aborted, reason));
        }
        break;
      default:
        break;
    }
  }

  std::string shortfall(const Plan& p) const {
    return "SpawnShortfall: " + std::to_string(p.commit_entered.size()) + " of " + std::to_string(p.grow.m) +
           " new ranks joined";
  }

  // ---- message handlers -------------------------------------------------------

  void on_join(ConnId id, const wire::Join& j) {
    auto& c = conns[id];
    switch (j.role) {
      case wire::Role::head: {
        c.role = ConnRole::head;
        c.id = j.id;
        heads[j.id] = id;
        send(id, wire::JoinAck{});
        trace("head-joined " + std::to_string(j.id));
        auto q = std::move(queued[j.id]);
        queued.erase(j.id);
        for (auto& l : q) send(id, l);
        break;
      }
      case wire::Role::fault:
        c.role = ConnRole::fault;
        c.id = j.id;
        c.launch_id = j.launch_id;
        send(id, wire::JoinAck{});
        trace("fault-registered " + std::to_string(j.id));
        break;
      case wire::Role::client:
        c.role = ConnRole::client;
        send(id, wire::JoinAck{});
        break;
      case wire::Role::rank:
        on_rank_join(id, j);
        break;
    }
  }

  void on_rank_join(ConnId id, const wire::Join& j) {
    auto& c = conns[id];
    c.role = ConnRole::rank;
    c.id = j.id;
    c.launch_id = j.launch_id;
    auto it = ranks.find(j.id);
    if (it == ranks.end() || it->second.launch_id != j.launch_id || it->second.aborted) {
      trace("stale-join " + std::to_string(j.id));
      send(id, wire::PendingCleared{history.empty() ? VersionTag{} : history.latest_version().next(),
                                    "launch was abandoned"});
      c.closed = true;
      return;
    }
    auto& rec = it->second;
    rec.conn = id;
    rec.ep = j.endpoint;
    rec.state = wire::RankState::live;
    rec.joined = true;
    trace("rank-joined " + std::to_string(j.id));
    if (launching) {
      bool all = std::all_of(ranks.begin(), ranks.end(), [](const auto& kv) { return kv.second.joined; });
      if (all && ranks.size() == n0) complete_launch();
      return;
    }
    send(id, wire::JoinAck{history});
  }

  /// The connection's rank record, unless the connection belongs to a stale launch.
  RankRec* rank_of(ConnId id) {
    auto& c = conns[id];
    if (c.role != ConnRole::rank) return nullptr;
    auto it = ranks.find(c.id);
    if (it == ranks.end() || it->second.launch_id != c.launch_id) return nullptr;
    return &it->second;
  }

  void on_barrier(ConnId id, const wire::BarrierEnter& b) {
    if (!rank_of(id)) {
      send(id, wire::error_reply(Errc::stray_enter, "barrier entry from an unknown process"));
      return;
    }
    Rank r = conns[id].id;
    if (b.seq == wire::kCommitSeq) {
      if (plan && plan->launched && b.comm == CommRef::world(plan->version) && contains(plan->grow.new_ranks, r)) {
        plan->commit_entered.insert(r);
        trace("commit-enter " + std::to_string(r) + " " + plan->version.str());
        try_advance();
      } else {
        send(id, wire::error_reply(Errc::stray_enter, "no pending epoch for rank " + std::to_string(r)));
      }
      return;
    }
    if (history.empty() || b.comm.is_null() || !b.comm.version() || *b.comm.version() > history.latest_version()) {
      send(id, wire::error_reply(Errc::stray_enter, "barrier on unknown communicator " + b.comm.str()));
      return;
    }
    std::vector<Rank> members;
    bool complete = false;
    try {
      members = membership(history, b.comm);
      complete = barriers.enter(b.comm, b.seq, r, members);
    } catch (const Error& e) {
      spdlog::warn("[{}] rejected barrier entry: {}", cfg.jobid, e.what());
      send(id, wire::error_reply(e.code(), e.what()));
      return;
    }
    if (complete) on_barrier_complete(b.comm, b.seq, members);
  }

  void on_barrier_complete(const CommRef& comm, std::uint32_t seq, const std::vector<Rank>& members) {
    bool world_latest = comm.family() == Family::world && comm.version() == history.latest_version();
    if (world_latest && plan && !plan->held &&
        (plan->driver == Driver::operator_request || plan->driver == Driver::restart)) {
      plan->held = HeldBarrier{comm, seq};
      trace("hold " + comm.str() + " seq " + std::to_string(seq));
      try_advance();
      return;
    }
    if (world_latest && ckpt && !ckpt->held) {
      ckpt->held = HeldBarrier{comm, seq};
      trace("quiesce " + comm.str() + " seq " + std::to_string(seq));
      for (Rank r : members) send_rank(r, wire::CkptReq{r, wire::CkptMode::world, ckpt->id});
      return;
    }
    release(comm, seq, members);
  }

  void on_resize(ConnId id, const wire::ResizeReq& req) {
    try {
      start_plan(ViewOrigin::grow, req.m, Driver::operator_request, cfg.command);
      send(id, wire::Reply{0, "resize accepted: " + plan->version.str() + " size " +
                                  std::to_string(world_size() + req.m)});
    } catch (const Error& e) {
      send(id, wire::error_reply(e.code(), e.what()));
    }
  }

  void on_operator_spawn(ConnId id, const wire::SpawnReq& req) {
    try {
      start_plan(ViewOrigin::spawn_merge, req.count, Driver::operator_request,
                 req.command.empty() ? cfg.command : req.command);
      send(id, wire::Reply{0, "spawn-merge accepted: " + plan->version.str() + " size " +
                                  std::to_string(world_size() + req.count)});
    } catch (const Error& e) {
      send(id, wire::error_reply(e.code(), e.what()));
    }
  }

  void on_fork(ConnId id, const wire::ForkReq& req) {
    if (!rank_of(id) || launching) {
      send(id, wire::Reply{-3, "fork outside a running world"});
      return;
    }
    Rank r = conns[id].id;
    if (fork_round.calls.empty()) fork_round.deadline = Clock::now() + cfg.collective_timeout;
    fork_round.calls[r] = {id, req};
    if (fork_round.calls.size() < world_size()) return;
    auto calls = std::move(fork_round.calls);
    fork_round.calls.clear();
    std::uint32_t m = calls.begin()->second.second.m;
    bool same = std::all_of(calls.begin(), calls.end(), [m](const auto& kv) { return kv.second.second.m == m; });
    std::int32_t code = 0;
    std::string why;
    if (!same) {
      code = -1;
      why = "mismatched m across callers";
    } else if (m < 1 || m > world_size()) {
      code = -2;
      why = "m=" + std::to_string(m) + " outside 1.." + std::to_string(world_size());
    } else if (plan || ckpt) {
      code = -3;
      why = "another resize is pending";
    }
    if (code == 0) {
      try {
        start_plan(ViewOrigin::fork, m, Driver::fork, cfg.command);
        return;
      } catch (const Error& e) {
        code = e.code() == Errc::invalid_m ? -2 : -3;
        why = e.what();
      }
    }
    trace("fork-rejected " + std::to_string(code));
    for (const auto& [rank, call] : calls) send(call.first, wire::Reply{code, why});
  }

  void on_api_spawn(ConnId id, const wire::SpawnReq& req) {
    if (!rank_of(id) || launching) {
      send(id, wire::error_reply(Errc::not_collective, "comm_spawn outside a running world"));
      return;
    }
    Rank r = conns[id].id;
    if (spawn_round.calls.empty()) spawn_round.deadline = Clock::now() + cfg.collective_timeout;
    spawn_round.calls[r] = {id, req};
    if (spawn_round.calls.size() < world_size()) return;
    auto calls = std::move(spawn_round.calls);
    spawn_round.calls.clear();
    const auto& first = calls.begin()->second.second;
    bool agree = std::all_of(calls.begin(), calls.end(), [&](const auto& kv) {
      return kv.second.second.count == first.count && kv.second.second.root == first.root;
    });
    auto reject = [&](Errc code, const std::string& why) {
      for (const auto& [rank, call] : calls) send(call.first, wire::error_reply(code, why));
    };
    if (!agree) return reject(Errc::not_collective, "callers disagree on count or root");
    auto root = calls.find(first.root);
    if (root == calls.end()) return reject(Errc::not_collective, "root is not a caller");
    try {
      start_plan(ViewOrigin::spawn_merge, first.count, Driver::api, root->second.second.command);
    } catch (const Error& e) {
      reject(e.code() == Errc::invalid_m ? Errc::spawn_failed : e.code(), e.what());
    }
  }

  void on_merge(ConnId id, const wire::MergeEnter& me) {
    if (!rank_of(id) || !plan || plan->driver != Driver::api || plan->version != me.version || !plan->spawn_replied) {
      send(id, wire::error_reply(Errc::spawn_aborted, "no merge pending for " + me.version.str()));
      return;
    }
    plan->merge_entries[conns[id].id] = me.high;
    try_advance();
  }

  void on_ckpt_request(ConnId id, const wire::CkptWorldReq& req) {
    if (launching || plan || ckpt) {
      send(id, wire::error_reply(Errc::resize_in_progress,
                                 launching ? "job is still launching" : "another resize or checkpoint is pending"));
      return;
    }
    CkptJob job;
    job.id = next_ckpt_id++;
    job.requester = id;
    auto timeout = req.timeout_ms ? std::chrono::milliseconds(req.timeout_ms) : cfg.checkpoint_timeout;
    job.deadline = Clock::now() + timeout;
    job.dir = cfg.ckpt_root / cfg.jobid;
    ckpt = std::move(job);
    trace("checkpoint-requested " + std::to_string(ckpt->id));
  }

  void on_image(const wire::CkptImage& img) {
    if (plan && plan->driver == Driver::fork && img.ckpt_id == plan->ckpt_id) {
      if (img.image.empty()) return abort_plan("clone source " + std::to_string(img.rank) + " could not be saved");
      auto path = job::job_dir(cfg.run_dir, cfg.jobid) /
                  ("fork-" + plan->version.str() + "-src" + std::to_string(img.rank) + ".img");
      fs::create_directories(path.parent_path());
      ckpt::write_file_atomic(path, img.image);
      plan->images[img.rank] = path;
      trace("clone-image " + std::to_string(img.rank));
      if (plan->images.size() == plan->grow.clone_sources.size()) launch_new_ranks();
      return;
    }
    if (ckpt && img.ckpt_id == ckpt->id) {
      if (img.image.empty()) return fail_checkpoint(Errc::serialization_failed, "rank " + std::to_string(img.rank));
      ckpt->images[img.rank] = img.image;
      if (ckpt->images.size() == world_size()) finish_checkpoint();
    }
  }

  void finish_checkpoint() {
    auto job = std::move(*ckpt);
    ckpt.reset();
    try {
      fs::create_directories(job.dir);
      ckpt::Manifest m;
      m.version = history.latest_version();
      m.size = world_size();
      for (auto& [r, bytes] : job.images) {
        auto name = "rank" + std::to_string(r) + ".img";
        ckpt::write_file_atomic(job.dir / name, bytes);
        m.files.emplace_back(r, name);
      }
      ckpt::write_manifest(job.dir, m);
    } catch (const Error& e) {
      if (job.held) release(job.held->comm, job.held->seq, world_members());
      send(job.requester, wire::error_reply(e.code(), e.what()));
      return;
    }
    trace("checkpoint " + history.latest_version().str() + " " + job.dir.string());
    if (job.held) release(job.held->comm, job.held->seq, world_members());
    send(job.requester, wire::Reply{0, job.dir.string()});
  }

  void fail_checkpoint(Errc code, const std::string& why) {
    auto job = std::move(*ckpt);
    ckpt.reset();
    trace("checkpoint-failed " + why);
    if (job.held) release(job.held->comm, job.held->seq, world_members());
    send(job.requester, wire::error_reply(code, why));
  }

  wire::StatusReport status_report() const {
    wire::StatusReport rep;
    rep.version = history.empty() ? VersionTag{} : history.latest_version();
    rep.size = world_size();
    if (plan) {
      rep.pending = wire::PendingInfo{plan->grow.kind, plan->grow.m, joined_count(), world_size() + plan->grow.m};
    }
    rep.checkpoint_pending = ckpt.has_value();
    rep.heads = static_cast<std::uint32_t>(heads.size());
    for (const auto& [id, c] : conns) {
      if (c.role == ConnRole::fault && !c.closed) ++rep.faults;
    }
    for (const auto& [r, rec] : ranks) {
      if (rec.aborted) continue;
      rep.ranks.push_back(wire::RankStatus{r, rec.node, rec.state, rec.exit_code});
    }
    return rep;
  }

  void on_finalize(ConnId id) {
    auto* rec = rank_of(id);
    if (!rec) return;
    rec->finalized = true;
    Rank r = conns[id].id;
    trace("finalize " + std::to_string(r));
    if (plan && rec->committed) abort_plan("rank " + std::to_string(r) + " finalized during a pending epoch");
  }

  void on_rank_exit(Rank r, std::uint32_t launch_id, int code) {
    auto it = ranks.find(r);
    if (it == ranks.end() || it->second.launch_id != launch_id) return;
    auto& rec = it->second;
    if (rec.state == wire::RankState::exited) return;
    rec.state = wire::RankState::exited;
    rec.exit_code = code;
    trace("rank-exit " + std::to_string(r) + " code " + std::to_string(code));
    if (launching) {
      fail("LaunchFailed(rank): rank " + std::to_string(r) + " exited with code " + std::to_string(code) +
           " before the world formed");
      return;
    }
    if (rec.aborted) return;
    if (plan) {
      if (contains(plan->grow.new_ranks, r) && !rec.committed) {
        abort_plan(shortfall(*plan) + "; rank " + std::to_string(r) + " exited with code " + std::to_string(code));
      } else if (rec.committed) {
        abort_plan("rank " + std::to_string(r) + " exited during a pending epoch");
      }
    }
    if (ckpt && rec.committed) fail_checkpoint(Errc::quiesce_timeout, "rank " + std::to_string(r) + " exited");
    if (rec.committed && code != 0 && first_nonzero == 0) {
      first_nonzero = code;
      spdlog::error("[{}] rank {} exited with code {}; stopping the job", cfg.jobid, r, code);
      trace("job-abort rank " + std::to_string(r));
      exit_code = code;
    }
  }

  void on_message(ConnId id, wire::Message& msg) {
    std::visit(
        [&](auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, wire::Join>) {
            on_join(id, m);
          } else if constexpr (std::is_same_v<T, wire::ResizeReq>) {
            on_resize(id, m);
          } else if constexpr (std::is_same_v<T, wire::ForkReq>) {
            on_fork(id, m);
          } else if constexpr (std::is_same_v<T, wire::SpawnReq>) {
            if (m.caller == wire::kNoRank) {
              on_operator_spawn(id, m);
            } else {
              on_api_spawn(id, m);
            }
          } else if constexpr (std::is_same_v<T, wire::CkptImage>) {
            on_image(m);
          } else if constexpr (std::is_same_v<T, wire::BarrierEnter>) {
            on_barrier(id, m);
          } else if constexpr (std::is_same_v<T, wire::StatusReq>) {
            send(id, wire::StatusRep{status_report()});
          } else if constexpr (std::is_same_v<T, wire::Finalize>) {
            on_finalize(id);
          } else if constexpr (std::is_same_v<T, wire::RankExit>) {
            auto& c = conns[id];
            if (c.role == ConnRole::fault) {
              on_rank_exit(m.rank, c.launch_id, m.code);
            } else if (c.role == ConnRole::head) {
              auto it = ranks.find(m.rank);
              if (it != ranks.end()) on_rank_exit(m.rank, it->second.launch_id, m.code);
            }
          } else if constexpr (std::is_same_v<T, wire::CkptWorldReq>) {
            on_ckpt_request(id, m);
          } else if constexpr (std::is_same_v<T, wire::MergeEnter>) {
            on_merge(id, m);
          } else {
            spdlog::warn("[{}] unexpected {} on connection {}", cfg.jobid, wire::kind_name(wire::kind_of(msg)), id);
          }
        },
        msg);
  }

  void on_close(ConnId id) {
    auto& c = conns[id];
    if (c.role == ConnRole::rank) {
      auto it = ranks.find(c.id);
      if (it != ranks.end() && it->second.conn == id) it->second.conn.reset();
    } else if (c.role == ConnRole::head) {
      if (heads.count(c.id) && heads[c.id] == id) heads.erase(c.id);
      if (!exit_code) fail("head of node " + std::to_string(c.id) + " disconnected");
    }
  }

  // ---- timers -----------------------------------------------------------------

  void check_timers() {
    auto now = Clock::now();
    if (launching && now > launch_deadline) {
      std::size_t joined = std::count_if(ranks.begin(), ranks.end(), [](const auto& kv) { return kv.second.joined; });
      fail("LaunchFailed: " + std::to_string(joined) + " of " + std::to_string(n0) + " ranks joined in time");
    }
    if (plan && now > plan->deadline) {
      bool joined = plan->commit_entered.size() == plan->grow.new_ranks.size();
      if (!joined) {
        abort_plan(shortfall(*plan));
      } else if (plan->driver == Driver::api) {
        abort_plan("NotCollective: not every parent called intercomm_merge");
      }
    }
    if (ckpt && now > ckpt->deadline) {
      fail_checkpoint(Errc::quiesce_timeout, "world did not quiesce in time");
    }
    if (!fork_round.calls.empty() && now > fork_round.deadline) {
      for (const auto& [r, call] : fork_round.calls) send(call.first, wire::Reply{-1, "not every rank called fork"});
      fork_round.calls.clear();
    }
    if (!spawn_round.calls.empty() && now > spawn_round.deadline) {
      for (const auto& [r, call] : spawn_round.calls) {
        send(call.first, wire::error_reply(Errc::not_collective, "not every rank called comm_spawn"));
      }
      spawn_round.calls.clear();
    }
    for (auto node : backend.reap_heads()) {
      if (!exit_code) fail("LaunchFailed(head): head of node " + std::to_string(node) + " exited");
    }
    if (stop_requested) fail("stopped on request");
  }

  void check_done() {
    if (exit_code || launching || plan || ckpt) return;
    bool all_done = true;
    for (const auto& [r, rec] : ranks) {
      if (rec.committed && rec.state != wire::RankState::exited) all_done = false;
    }
    if (all_done && !ranks.empty()) exit_code = first_nonzero;
  }

  void drain_posted() {
    std::vector<std::tuple<Rank, std::uint32_t, int>> exits;
    {
      std::lock_guard lk(posted_mu);
      exits.swap(posted_exits);
    }
    char buf[64];
    while (::read(wake_r.get(), buf, sizeof buf) > 0) {
    }
    for (auto [r, lid, code] : exits) on_rank_exit(r, lid, code);
  }

  void loop() {
    while (!exit_code) {
      std::vector<pollfd> fds;
      std::vector<ConnId> ids;
      fds.push_back({wake_r.get(), POLLIN, 0});
      fds.push_back({listener.fd(), POLLIN, 0});
      for (auto& [id, c] : conns) {
        fds.push_back({c.link.fd(), POLLIN, 0});
        ids.push_back(id);
      }
      if (::poll(fds.data(), fds.size(), 50) < 0 && errno != EINTR) throw Error(Errc::io_error, "poll");
      if (fds[0].revents) drain_posted();
      if (fds[1].revents & POLLIN) {
        try {
          conns.emplace(next_conn++, Conn{listener.accept()});
        } catch (const Error& e) {
          spdlog::warn("[{}] accept failed: {}", cfg.jobid, e.what());
        }
      }
      for (std::size_t i = 0; i < ids.size() && !exit_code; ++i) {
        if (!fds[i + 2].revents) continue;
        ConnId id = ids[i];
        bool ok = false;
        try {
          ok = conns[id].link.pump();
          while (!conns[id].closed) {
            auto msg = conns[id].link.next();
            if (!msg) break;
            on_message(id, *msg);
          }
        } catch (const Error& e) {
          spdlog::warn("[{}] dropping connection {}: {}", cfg.jobid, id, e.what());
          ok = false;
        }
        if (!ok) conns[id].closed = true;
      }
      for (auto it = conns.begin(); it != conns.end();) {
        if (it->second.closed) {
          on_close(it->first);
          it = conns.erase(it);
        } else {
          ++it;
        }
      }
      check_timers();
      check_done();
    }
  }

  void shutdown() {
    auto rep = status_report();
    std::ofstream fin(job::final_path(cfg.run_dir, cfg.jobid), std::ios::trunc);
    fin << format_status(rep) << "exit " << *exit_code << "\n";
    if (!failure.empty()) fin << "failure " << failure << "\n";
    fin.close();
    trace("shutdown exit " + std::to_string(*exit_code));
    for (auto& [node, id] : heads) send(id, wire::Finalize{});
    bool clean = *exit_code == 0;
    if (!clean) {
      // Dropping every link makes heads and fault daemons kill what is left.
      conns.clear();
      heads.clear();
    }
    backend.shutdown(std::chrono::milliseconds(clean ? 5000 : 2000));
    conns.clear();
    std::error_code ec;
    fs::remove(job::ctl_path(cfg.run_dir, cfg.jobid), ec);
  }
};

Controller::Controller(ControllerConfig cfg, Backend& backend)
    : s_(std::make_unique<State>(std::move(cfg), backend)) {
  s_->prepare();
}

Controller::~Controller() = default;

const Endpoint& Controller::endpoint() const { return s_->listener.endpoint(); }

int Controller::run() {
  s_->start();
  if (!s_->exit_code) s_->loop();
  s_->shutdown();
  return *s_->exit_code;
}

void Controller::post_rank_exit(Rank rank, std::uint32_t launch_id, int code) {
  {
    std::lock_guard lk(s_->posted_mu);
    s_->posted_exits.emplace_back(rank, launch_id, code);
  }
  char b = 1;
  [[maybe_unused]] auto n = ::write(s_->wake_w.get(), &b, 1);
}

void Controller::request_stop() {
  s_->stop_requested = true;
  char b = 1;
  [[maybe_unused]] auto n = ::write(s_->wake_w.get(), &b, 1);
}

}  // namespace elastic
