// Runtime API tests against a real controller, with ranks as threads.

#include <doctest.h>

#include <atomic>
#include <mutex>

#include "elastic/job.hpp"
#include "support/harness.hpp"

using namespace elastic;
using namespace elastic::testing;

namespace {

Errc error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::io_error;
}

/// Per-rank observations collected from rank threads.
struct Observed {
  std::mutex mu;
  std::map<Rank, std::map<std::string, std::string>> by_rank;

  void set(Rank r, const std::string& key, const std::string& value) {
    std::lock_guard lk(mu);
    by_rank[r][key] = value;
  }
  std::string get(Rank r, const std::string& key) {
    std::lock_guard lk(mu);
    return by_rank[r][key];
  }
};

std::string join(const std::vector<Rank>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

int resized(Status s) { return s == Status::world_resized ? 1 : 0; }

}  // namespace

TEST_CASE("static launch of two ranks") {
  Observed obs;
  InProcessJob job(2, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    rt.init(env);
    obs.set(rt.rank(), "size", std::to_string(rt.size()));
    obs.set(rt.rank(), "version", rt.version().str());
    rt.finalize();
    return 0;
  });
  CHECK(job.wait() == 0);
  for (Rank r : {0u, 1u}) {
    CHECK(obs.get(r, "size") == "2");
    CHECK(obs.get(r, "version") == "v0");
  }
}

TEST_CASE("call guards and argument checks") {
  Observed obs;
  InProcessJob job(4, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    Rank r = env.rank;
    obs.set(r, "pre-init", std::string(errc_name(error_of([&] { rt.register_state(to_bytes("x")); }))));
    rt.init(env);
    obs.set(r, "second-init", std::string(errc_name(error_of([&] { rt.init(env); }))));
    obs.set(r, "out-of-range", std::string(errc_name(error_of([&] { rt.send(9, 7, to_bytes("x")); }))));
    obs.set(r, "self", std::string(errc_name(error_of([&] { rt.send(r, 7, to_bytes("x")); }))));
    obs.set(r, "null-barrier", std::string(errc_name(error_of([&] { rt.barrier(CommRef::null()); }))));
    obs.set(r, "fork-unregistered", std::string(errc_name(error_of([&] { rt.fork(1); }))));
    auto a = rt.resized_world();
    auto b = rt.resized_world();
    obs.set(r, "rw", a.is_null() && a == b ? "null-stable" : "?");
    if (r == 0) {
      Status s = rt.send(1, 7, to_bytes("x"));
      obs.set(r, "send", s == Status::ok ? "ok" : "resized");
    }
    if (r == 1) {
      auto got = rt.recv(0, 7);
      obs.set(r, "recv", to_string(got.payload) + (got.status == Status::ok ? " ok" : " resized"));
    }
    rt.barrier();
    rt.finalize();
    rt.finalize();
    obs.set(r, "after-finalize", std::string(errc_name(error_of([&] { rt.send((r + 1) % 4, 1, {}); }))));
    return 0;
  });
  CHECK(job.wait() == 0);
  for (Rank r = 0; r < 4; ++r) {
    CAPTURE(r);
    CHECK(obs.get(r, "pre-init") == "NotInitialized");
    CHECK(obs.get(r, "second-init") == "DuplicateInit");
    CHECK(obs.get(r, "out-of-range") == "RankOutOfRange");
    CHECK(obs.get(r, "self") == "SelfSend");
    CHECK(obs.get(r, "null-barrier") == "NullCommunicator");
    CHECK(obs.get(r, "fork-unregistered") == "StateNotRegistered");
    CHECK(obs.get(r, "rw") == "null-stable");
    CHECK(obs.get(r, "after-finalize") == "Disconnected");
  }
  CHECK(obs.get(0, "send") == "ok");
  CHECK(obs.get(1, "recv") == "x ok");
}

TEST_CASE("grow 4 to 6: notice once per old rank, new ranks block in init until commit") {
  Observed obs;
  std::atomic<InProcessJob*> self{nullptr};
  InProcessJob job(4, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    rt.init(env);
    Rank me = rt.rank();
    int notices = 0;
    if (env.pending) {
      obs.set(me, "init-version", rt.version().str());
      obs.set(me, "init-size", std::to_string(rt.size()));
    } else {
      notices += resized(rt.barrier());
      if (me == 0) {
        while (!self) std::this_thread::sleep_for(1ms);
        auto reply = std::get<wire::Reply>(self.load()->request(wire::ResizeReq{2}));
        obs.set(me, "reply", std::to_string(reply.code));
        // The notice arrives asynchronously; the first send that sees it must be
        // followed by plain OK sends.
        std::uint32_t sent = 0;
        bool seen = false;
        for (; sent < 5000 && !seen; ++sent) {
          seen = rt.send(1, 1, to_bytes("ping")) == Status::world_resized;
          if (!seen) std::this_thread::sleep_for(1ms);
        }
        notices += seen;
        Status next = rt.send(1, 1, to_bytes("ping"));
        ++sent;
        obs.set(me, "next-send", next == Status::ok ? "ok" : "resized");
        ByteWriter w;
        w.u32(sent);
        notices += resized(rt.send(1, 2, w.bytes()));
      }
      if (me == 1) {
        auto count = rt.recv(0, 2);
        notices += resized(count.status);
        ByteReader r(count.payload);
        for (std::uint32_t i = r.u32(); i > 0; --i) notices += resized(rt.recv(0, 1).status);
      }
      notices += resized(rt.barrier());  // commit point
    }
    obs.set(me, "after-commit", rt.version().str() + " " + std::to_string(rt.size()));
    notices += resized(rt.barrier());
    notices += resized(rt.barrier(CommRef::world(VersionTag{1})));
    obs.set(me, "notices", std::to_string(notices));
    obs.set(me, "joined-late", std::to_string(rt.joined_late()));
    rt.finalize();
    return 0;
  });
  self = &job;
  CHECK(job.wait() == 0);
  CHECK(obs.get(0, "reply") == "0");
  CHECK(obs.get(0, "next-send") == "ok");
  for (Rank r = 0; r < 6; ++r) {
    CAPTURE(r);
    CHECK(obs.get(r, "after-commit") == "v1 6");
    CHECK(obs.get(r, "notices") == (r < 4 ? "1" : "0"));
    CHECK(obs.get(r, "joined-late") == (r < 4 ? "0" : "1"));
  }
  CHECK(obs.get(4, "init-version") == "v1");
  CHECK(obs.get(5, "init-size") == "6");
  auto trace = slurp(job::trace_path(job.config().run_dir, job.config().jobid));
  CHECK(trace.find("commit v1 size 6 origin GROW") != std::string::npos);
}

TEST_CASE("a new rank dying before the commit rolls the grow back") {
  Observed obs;
  std::atomic<InProcessJob*> self{nullptr};
  InProcessJob job(4, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    if (env.pending) return 9;
    rt.init(env);
    rt.barrier();
    if (rt.rank() == 0) {
      while (!self) std::this_thread::sleep_for(1ms);
      self.load()->request(wire::ResizeReq{2});
    }
    rt.barrier();
    rt.barrier();
    obs.set(rt.rank(), "final", rt.version().str() + " " + std::to_string(rt.size()));
    rt.finalize();
    return 0;
  });
  self = &job;
  CHECK(job.wait() == 0);
  for (Rank r = 0; r < 4; ++r) CHECK(obs.get(r, "final") == "v0 4");
  auto trace = slurp(job::trace_path(job.config().run_dir, job.config().jobid));
  CHECK(trace.find("abort v1 SpawnShortfall") != std::string::npos);
  CHECK(trace.find("commit v1") == std::string::npos);
}

TEST_CASE("a second resize while one is pending is ResizeInProgress") {
  std::atomic<int> stage{0};
  std::atomic<InProcessJob*> self{nullptr};
  std::string second;
  InProcessJob job(2, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    rt.init(env);
    if (!env.pending) {
      if (rt.rank() == 0) {
        while (!self) std::this_thread::sleep_for(1ms);
        self.load()->request(wire::ResizeReq{1});
        auto r = std::get<wire::Reply>(self.load()->request(wire::ResizeReq{1}));
        second = wire::reply_error(r) ? std::string(errc_name(*wire::reply_error(r))) : "accepted";
        stage = 1;
      }
      rt.barrier();
    }
    rt.barrier();
    rt.finalize();
    return 0;
  });
  self = &job;
  CHECK(job.wait() == 0);
  CHECK(stage == 1);
  CHECK(second == "ResizeInProgress");
}

TEST_CASE("fork: returns, memberships and inherited state") {
  Observed obs;
  InProcessJob job(2, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    rt.init(env);
    Rank me = rt.rank();
    if (!rt.fork_child()) {
      obs.set(me, "pre-parents", rt.comm_parents().is_null() ? "null" : "set");
      obs.set(me, "pre-children", rt.comm_children().is_null() ? "null" : "set");
      rt.register_state(pattern_bytes(1024, me));
    }
    int f = rt.fork(1);
    obs.set(me, "fork", std::to_string(f));
    obs.set(me, "children", join(rt.membership(rt.comm_children())));
    obs.set(me, "parents", join(rt.membership(rt.comm_parents())));
    obs.set(me, "version", rt.version().str());
    if (f == 0) obs.set(me, "state-ok", rt.state() == pattern_bytes(1024, 0) ? "1" : "0");
    rt.barrier();
    rt.finalize();
    return 0;
  });
  CHECK(job.wait() == 0);
  CHECK(obs.get(0, "pre-parents") == "null");
  CHECK(obs.get(1, "pre-children") == "null");
  for (Rank r = 0; r < 3; ++r) {
    CAPTURE(r);
    CHECK(obs.get(r, "fork") == (r < 2 ? "1" : "0"));
    CHECK(obs.get(r, "children") == "2");
    CHECK(obs.get(r, "parents") == "0,1");
    CHECK(obs.get(r, "version") == "v1");
  }
  CHECK(obs.get(2, "state-ok") == "1");
}

TEST_CASE("fork failure codes reach every rank") {
  for (auto [mine, others, expect] : {std::tuple{3u, 2u, -1}, std::tuple{5u, 5u, -2}}) {
    Observed obs;
    InProcessJob job(4, [&, mine = mine, others = others](Runtime& rt, const Environment& env, const wire::Launch&) {
      rt.init(env);
      rt.register_state(to_bytes("s"));
      int f = rt.fork(rt.rank() == 2 ? mine : others);
      obs.set(rt.rank(), "fork", std::to_string(f));
      obs.set(rt.rank(), "version", rt.version().str());
      rt.finalize();
      return 0;
    });
    CHECK(job.wait() == 0);
    for (Rank r = 0; r < 4; ++r) {
      CHECK(obs.get(r, "fork") == std::to_string(expect));
      CHECK(obs.get(r, "version") == "v0");
    }
  }
}

TEST_CASE("replace_state in a fork child is what the next checkpoint captures") {
  std::atomic<InProcessJob*> self{nullptr};
  std::atomic<bool> checkpointed{false};
  std::string reply_text;
  InProcessJob job(1, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    rt.init(env);
    if (!rt.fork_child()) rt.register_state(pattern_bytes(1024, 7));
    int f = rt.fork(1);
    if (f == 0) {
      Bytes half(rt.state().begin(), rt.state().begin() + 512);
      rt.replace_state(half);
    }
    std::thread requester;
    if (rt.rank() == 0) {
      requester = std::thread([&] {
        while (!self) std::this_thread::sleep_for(1ms);
        auto r = std::get<wire::Reply>(self.load()->request(wire::CkptWorldReq{10000}));
        reply_text = r.text;
        checkpointed = true;
      });
    }
    // Keep completing barriers until rank 0 has seen the checkpoint finish.
    for (;;) {
      rt.barrier();
      bool stop = false;
      if (rt.rank() == 0) {
        stop = checkpointed;
        rt.send(1, 3, Bytes{std::byte{stop}});
      } else {
        stop = rt.recv(0, 3).payload.at(0) != std::byte{0};
      }
      if (stop) break;
    }
    if (requester.joinable()) requester.join();
    rt.finalize();
    return 0;
  });
  self = &job;
  REQUIRE(job.wait() == 0);
  auto dir = job.config().ckpt_root / job.config().jobid;
  auto manifest = ckpt::read_manifest(dir);
  CHECK(manifest.size == 2);
  CHECK(manifest.version == VersionTag{1});
  auto child = ckpt::read_image_file(dir / "rank1.img");
  const Bytes full = pattern_bytes(1024, 7);
  CHECK(child.payload == Bytes(full.begin(), full.begin() + 512));
  auto parent = ckpt::read_image_file(dir / "rank0.img");
  CHECK(parent.payload == pattern_bytes(1024, 7));
  CHECK(parent.metadata.at(ckpt::keys::rank) == "0");
  CHECK(child.metadata.at(ckpt::keys::rank) == "1");
  CHECK(reply_text == dir.string());
}

TEST_CASE("checkpoint while ranks never reach a barrier is QuiesceTimeout") {
  std::atomic<bool> release{false};
  std::atomic<int> live{0};
  InProcessJob job(2, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
    rt.init(env);
    rt.register_state(to_bytes("s"));
    ++live;
    while (!release) std::this_thread::sleep_for(2ms);
    rt.barrier();
    rt.finalize();
    return 0;
  });
  REQUIRE(eventually([&] { return live == 2; }));
  auto reply = std::get<wire::Reply>(job.request(wire::CkptWorldReq{200}));
  REQUIRE(wire::reply_error(reply).has_value());
  CHECK(*wire::reply_error(reply) == Errc::quiesce_timeout);
  release = true;
  CHECK(job.wait() == 0);
}

TEST_CASE("spawn two workers from two ranks and merge") {
  for (int parent_high : {0, 1}) {
    Observed obs;
    InProcessJob job(2, [&](Runtime& rt, const Environment& env, const wire::Launch&) {
      rt.init(env);
      Rank me = rt.rank();
      CommRef merged;
      if (auto p = rt.parent()) {
        obs.set(me, "remote", join(p->remote_group));
        merged = rt.intercomm_merge(*p, parent_high ? 0 : 1);
      } else {
        obs.set(me, "rw-before", rt.resized_world().is_null() ? "null" : "set");
        auto inter = rt.comm_spawn({"worker"}, 2, 0);
        obs.set(me, "remote", join(inter.remote_group));
        merged = rt.intercomm_merge(inter, parent_high);
      }
      auto rw = rt.resized_world();
      obs.set(me, "rw-stable", rw == rt.resized_world() ? "1" : "0");
      obs.set(me, "merged", join(rt.membership(merged)));
      obs.set(me, "rw", join(rt.membership(rw)));
      obs.set(me, "size", std::to_string(rt.size()));
      rt.barrier(rw);
      rt.finalize();
      return 0;
    });
    CHECK(job.wait() == 0);
    std::string order = parent_high == 0 ? "0,1,2,3" : "2,3,0,1";
    for (Rank r = 0; r < 4; ++r) {
      CAPTURE(r);
      CAPTURE(parent_high);
      CHECK(obs.get(r, "merged") == order);
      CHECK(obs.get(r, "rw") == order);
      CHECK(obs.get(r, "size") == "4");
      CHECK(obs.get(r, "rw-stable") == "1");
      CHECK(obs.get(r, "remote") == (r < 2 ? "2,3" : "0,1"));
    }
    CHECK(obs.get(0, "rw-before") == "null");
  }
}
