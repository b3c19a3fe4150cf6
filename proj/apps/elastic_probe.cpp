// Instrumented test program. Each rank writes a key/value report that the
// integration tests inspect.
//
//   traffic  sequence-numbered random traffic around every barrier
//   fork     one or more collective forks with clone verification
//   spawn    comm_spawn from inside the program, then merge

#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "demo_common.hpp"
#include "elastic/process.hpp"

using namespace elastic;
using namespace elastic::demo;

namespace {

struct Options {
  std::string mode = "traffic";
  int iters = 5;
  std::uint32_t max_msgs = 4;
  std::uint32_t max_payload = 64;
  std::uint64_t seed = 1;
  std::uint32_t expect_size = 0;
  std::string hold_at;
  std::string hold_dir;
  std::string report_dir;
  int crash_if_new = 0;
  std::string forks = "1";
  std::uint32_t state_bytes = 256;
  int mismatch_rank = -1;
  int crash_child = 0;
  std::uint32_t spawn = 2;
  std::string spawn_cmd;
};

std::vector<std::string> g_argv;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t draw(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix(mix(mix(seed ^ a) ^ b) ^ c);
}

std::string join(const std::vector<Rank>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out.empty() ? "-" : out;
}

/// Membership as text; NULL communicators print as "null".
std::string members(const Runtime& rt, const CommRef& comm) {
  try {
    return join(rt.membership(comm));
  } catch (const Error& e) {
    if (e.code() == Errc::null_communicator) return "null";
    if (e.code() == Errc::unknown_version) return "unknown";
    throw;
  }
}

class Report {
 public:
  template <class V>
  void set(const std::string& key, const V& value) {
    std::ostringstream s;
    s << value;
    lines_[key] = s.str();
  }
  std::string str() const {
    std::string out;
    for (const auto& [k, v] : lines_) out += k + " " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> lines_;
};

bool env_set(const char* name) {
  const char* v = std::getenv(name);
  return v && *v && std::string(v) != "0";
}

// ---- traffic -------------------------------------------------------------------

int run_traffic(const Options& opt) {
  if (opt.crash_if_new && env_set(env_vars::pending)) return opt.crash_if_new;
  Runtime rt;
  rt.init();
  Report rep;
  HoldPoints hold{parse_int_list(opt.hold_at), opt.hold_dir};
  const Rank me = rt.rank();
  rep.set("rw-null-start", rt.resized_world().is_null());
  rep.set("parents-start", members(rt, rt.comm_parents()));
  rep.set("children-start", members(rt, rt.comm_children()));

  int notices = 0;
  std::uint64_t gaps = 0, dups = 0, received = 0, stale = 0;
  std::map<Rank, std::uint64_t> next_out, next_in;
  std::uint64_t it = 0;
  const std::uint32_t expect = opt.expect_size ? opt.expect_size : rt.size();

  if (rt.joined_late()) {
    auto got = rt.recv(0, tags::iteration);
    notices += resized(got.status);
    ByteReader r(got.payload);
    it = r.u64();
  }
  auto count = [&](std::uint64_t i, Rank s, Rank d) {
    return static_cast<std::uint32_t>(draw(opt.seed, i, s, d) % (opt.max_msgs + 1));
  };

  while (!(it >= static_cast<std::uint64_t>(opt.iters) && rt.size() >= expect)) {
    ++it;
    const std::uint32_t n = rt.size();
    for (Rank d = 0; d < n; ++d) {
      if (d == me) continue;
      for (std::uint32_t k = 0, c = count(it, me, d); k < c; ++k) {
        ByteWriter w;
        w.u32(me);
        w.u64(next_out[d]++);
        w.u64(it);
        Bytes pad(draw(opt.seed, it, me, 1000 + k) % (opt.max_payload + 1), std::byte{0x5a});
        w.blob(pad);
        notices += resized(rt.send(d, tags::traffic, w.bytes()));
      }
    }
    hold.maybe_wait(me, static_cast<int>(it));
    notices += resized(rt.barrier());
    // Traffic sent before the barrier is received after it, across any commit.
    for (Rank s = 0; s < n; ++s) {
      if (s == me) continue;
      for (std::uint32_t k = 0, c = count(it, s, me); k < c; ++k) {
        auto got = rt.recv(s, tags::traffic);
        notices += resized(got.status);
        ByteReader r(got.payload);
        Rank src = r.u32();
        std::uint64_t seq = r.u64(), when = r.u64();
        ++received;
        auto& want = next_in[src];
        if (seq > want) gaps += seq - want;
        if (seq < want) ++dups;
        if (when != it || src != s) ++stale;
        want = std::max(want, seq + 1);
      }
    }
    if (me == 0 && rt.size() > n) {
      ByteWriter w;
      w.u64(it);
      for (Rank r = n; r < rt.size(); ++r) rt.send(r, tags::iteration, w.bytes());
    }
  }

  rep.set("rank", me);
  rep.set("notices", notices);
  rep.set("version", rt.version().str());
  rep.set("size", rt.size());
  rep.set("joined-late", rt.joined_late());
  rep.set("iterations", it);
  rep.set("received", received);
  rep.set("gaps", gaps);
  rep.set("dups", dups);
  rep.set("stale", stale);
  for (const auto& v : rt.history().views()) rep.set("members-" + v.version.str(), members(rt, CommRef::world(v.version)));
  rep.set("members-latest", members(rt, CommRef::world()));
  rep.set("rw-null-end", rt.resized_world().is_null());
  rep.set("rw-members", members(rt, rt.resized_world()));
  rep.set("parents-end", members(rt, rt.comm_parents()));
  rep.set("children-end", members(rt, rt.comm_children()));
  write_report(opt.report_dir, me, rep.str());
  rt.finalize();
  return 0;
}

// ---- fork ----------------------------------------------------------------------

Bytes stage_state(std::uint32_t stage, Rank rank, const Options& opt) {
  ByteWriter w;
  w.u32(stage);
  for (std::uint32_t i = 0; i < opt.state_bytes; ++i) w.u8(static_cast<std::uint8_t>(draw(opt.seed, stage, rank, i)));
  return std::move(w).take();
}

int run_fork(const Options& opt) {
  if (opt.crash_child && env_set(env_vars::fork_m)) return opt.crash_child;
  std::vector<std::uint32_t> plan;
  std::stringstream in(opt.forks);
  for (std::string item; std::getline(in, item, ',');) plan.push_back(static_cast<std::uint32_t>(std::stoul(item)));

  Runtime rt;
  rt.init();
  Report rep;
  std::uint32_t stage = 0;
  bool resuming = rt.fork_child();
  if (resuming) {
    ByteReader r(rt.state());
    stage = r.u32();
  } else {
    rep.set("parents-start", members(rt, rt.comm_parents()));
    rep.set("children-start", members(rt, rt.comm_children()));
  }
  rep.set("first-stage", stage);

  bool failed = false;
  for (; stage < plan.size(); ++stage) {
    if (!resuming) rt.register_state(stage_state(stage, rt.rank(), opt));
    resuming = false;
    const Bytes before = rt.state();
    std::uint32_t m = plan[stage];
    if (static_cast<int>(rt.rank()) == opt.mismatch_rank) ++m;
    int f = rt.fork(m);
    std::string key = "stage" + std::to_string(stage);
    rep.set(key + "-fork", f);
    if (f < 0) {
      failed = true;
      break;
    }
    auto parents = rt.membership(rt.comm_parents());
    auto children = rt.membership(rt.comm_children());
    rep.set(key + "-version", rt.version().str());
    rep.set(key + "-parents", join(parents));
    rep.set(key + "-children", join(children));
    if (f > 0) {
      for (std::size_t i = 0; i < parents.size() && i < children.size(); ++i) {
        if (parents[i] == rt.rank()) rt.send(children[i], tags::clone_check, before);
      }
    } else {
      auto pos = std::find(children.begin(), children.end(), rt.rank()) - children.begin();
      auto got = rt.recv(parents[static_cast<std::size_t>(pos)], tags::clone_check);
      rep.set(key + "-clone-ok", got.payload == before);
    }
    rt.barrier();
  }
  rep.set("rank", rt.rank());
  rep.set("failed", failed);
  rep.set("version", rt.version().str());
  rep.set("size", rt.size());
  for (const auto& v : rt.history().views()) {
    rep.set("members-" + v.version.str(), members(rt, CommRef::world(v.version)));
    if (v.origin == ViewOrigin::fork) {
      rep.set("children-" + v.version.str(), members(rt, CommRef::children(v.version)));
      rep.set("parents-" + v.version.str(), members(rt, CommRef::parents(v.version)));
    }
  }
  write_report(opt.report_dir, rt.rank(), rep.str());
  rt.finalize();
  return 0;
}

// ---- spawn ---------------------------------------------------------------------

int run_spawn(const Options& opt) {
  Runtime rt;
  rt.init();
  Report rep;
  rep.set("rw-null-start", rt.resized_world().is_null());
  auto parent = rt.parent();
  rep.set("spawned", parent.has_value());
  try {
    CommRef merged;
    if (parent) {
      merged = rt.intercomm_merge(*parent, 1);
    } else {
      std::vector<std::string> cmd;
      if (opt.spawn_cmd.empty()) {
        cmd = g_argv;
        cmd[0] = proc::self_exe().string();
      } else {
        cmd = {opt.spawn_cmd};
      }
      auto inter = rt.comm_spawn(cmd, opt.spawn, 0);
      rep.set("inter-remote", join(inter.remote_group));
      merged = rt.intercomm_merge(inter, 0);
    }
    rep.set("merged", members(rt, merged));
    rep.set("rw-members", members(rt, rt.resized_world()));
    rt.barrier();
  } catch (const Error& e) {
    rep.set("error", errc_name(e.code()));
  }
  rep.set("rank", rt.rank());
  rep.set("version", rt.version().str());
  rep.set("size", rt.size());
  rep.set("rw-null-end", rt.resized_world().is_null());
  write_report(opt.report_dir, rt.rank(), rep.str());
  rt.finalize();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  cli::init_logging();
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Instrumented elastic test program"};
  Options opt;
  app.add_option("--mode", opt.mode)->check(CLI::IsMember({"traffic", "fork", "spawn"}));
  app.add_option("--iters", opt.iters, "Minimum traffic iterations");
  app.add_option("--msgs", opt.max_msgs, "Maximum messages per pair per iteration");
  app.add_option("--payload", opt.max_payload, "Maximum padding bytes per message");
  app.add_option("--seed", opt.seed);
  app.add_option("--expect-size", opt.expect_size, "Keep iterating until the world reaches this size");
  app.add_option("--hold-at", opt.hold_at);
  app.add_option("--hold-dir", opt.hold_dir);
  app.add_option("--report-dir", opt.report_dir);
  app.add_option("--crash-if-new", opt.crash_if_new, "Exit with this code when started as a pending rank");
  app.add_option("--forks", opt.forks, "Comma-separated m for successive forks");
  app.add_option("--state-bytes", opt.state_bytes);
  app.add_option("--mismatch-rank", opt.mismatch_rank);
  app.add_option("--crash-child", opt.crash_child, "Fork children exit with this code before init");
  app.add_option("--spawn", opt.spawn, "Processes to spawn in spawn mode");
  app.add_option("--spawn-cmd", opt.spawn_cmd, "Program to spawn instead of this one");
  CLI11_PARSE(app, argc, argv);
  try {
    if (opt.mode == "fork") return run_fork(opt);
    if (opt.mode == "spawn") return run_spawn(opt);
    return run_traffic(opt);
  } catch (const Error& e) {
    std::cerr << "elastic_probe: " << e.what() << "\n";
    return 1;
  }
}
