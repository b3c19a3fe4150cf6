// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. ELASTIC_ACCEPT_SEED overrides the base seed.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "elastic/checkpoint.hpp"
#include "elastic/wire.hpp"
#include "grid.hpp"
#include "support/generators.hpp"
#include "support/harness.hpp"
#include "support/oracle.hpp"

using namespace elastic;
using namespace elastic::testing;

namespace {

struct Failure {
  std::string what;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::string range_list(Rank lo, Rank hi) {
  std::string out;
  for (Rank r = lo; r < hi; ++r) out += (r > lo ? "," : "") + std::to_string(r);
  return out;
}

using Report = std::map<std::string, std::string>;

Report report(const fs::path& dir, Rank r) {
  auto p = dir / ("rank" + std::to_string(r) + ".txt");
  expect(fs::exists(p), "missing report " + p.filename().string());
  return read_report(p);
}

std::string field(const Report& rep, const std::string& key) {
  auto it = rep.find(key);
  return it == rep.end() ? "<absent>" : it->second;
}

void expect_field(const Report& rep, const std::string& key, const std::string& want, const std::string& ctx) {
  auto got = field(rep, key);
  expect(got == want, ctx + ": " + key + " is " + got + ", expected " + want);
}

/// A job launched in the background; rank 0 stops at the hold iterations.
class Job {
 public:
  Job(const TempDir& dir, std::string jobid, std::uint32_t n, std::uint32_t nodes, std::vector<std::string> program,
      const std::string& hold_at = "", std::vector<std::string> mrun_extra = {})
      : dir_(dir), jobid_(std::move(jobid)), hold_(dir / ("hold-" + jobid_)) {
    if (!hold_at.empty()) {
      fs::create_directories(hold_);
      program.insert(program.end(), {"--hold-at", hold_at, "--hold-dir", hold_.string()});
    }
    auto argv = mrun_args(dir, jobid_, n, nodes);
    argv.insert(argv.end(), mrun_extra.begin(), mrun_extra.end());
    argv.push_back("--");
    argv.insert(argv.end(), program.begin(), program.end());
    bg_ = std::make_unique<Background>(argv, dir / (jobid_ + ".log"));
  }

  void reached(int k) {
    expect(wait_for_file(hold_ / ("reached-" + std::to_string(k))),
           jobid_ + " never reached iteration " + std::to_string(k) + "; log: " + bg_->log());
  }
  void go(int k) { touch(hold_ / ("go-" + std::to_string(k))); }

  Captured mctl(std::vector<std::string> args) {
    std::vector<std::string> argv{Programs::mctl(), "--run-dir", (dir_ / "run").string()};
    argv.insert(argv.end(), args.begin(), args.end());
    return run(argv);
  }
  void mctl_ok(std::vector<std::string> args) {
    auto out = mctl(args);
    expect(out.code == 0, "mctl " + args.front() + " failed: " + out.output);
  }
  std::string status() { return mctl({"status", jobid_}).output; }

  void finish() {
    int code = bg_->wait(50s);
    expect(code == 0, jobid_ + " exited " + std::to_string(code) + "; log: " + bg_->log());
  }
  std::string final_line() const { return first_line(slurp(dir_ / "run" / (jobid_ + ".final"))); }
  const std::string& id() const { return jobid_; }

 private:
  const TempDir& dir_;
  std::string jobid_;
  fs::path hold_;
  std::unique_ptr<Background> bg_;
};

void run_ok(const TempDir& dir, const std::string& jobid, std::uint32_t n, std::uint32_t nodes,
            const std::vector<std::string>& program, std::vector<std::string> mrun_extra = {}) {
  Job job(dir, jobid, n, nodes, program, "", std::move(mrun_extra));
  job.finish();
}

std::uint64_t base_seed() {
  const char* s = std::getenv("ELASTIC_ACCEPT_SEED");
  return s ? std::strtoull(s, nullptr, 10) : 20261016;
}

// ---- 1 and 8: grow under random traffic ---------------------------------------------

struct TrafficTrial {
  std::uint64_t seed;
  std::string msgs, payload;
  int hold;
};

TrafficTrial traffic_trial(std::mt19937_64& rng) {
  return {rng() % 100000, std::to_string(1 + rng() % 8), std::to_string(rng() % 512), 1 + static_cast<int>(rng() % 3)};
}

/// Launches 4 ranks of traffic, grows by 2 at the hold and returns the report dir.
fs::path grow_under_traffic(const TempDir& dir, const std::string& jobid, const TrafficTrial& t, std::string* final_line) {
  auto rep = dir / (jobid + "-rep");
  Job job(dir, jobid, 4, 2,
          {Programs::probe(), "--iters", std::to_string(t.hold + 2), "--expect-size", "6", "--seed",
           std::to_string(t.seed), "--msgs", t.msgs, "--payload", t.payload, "--report-dir", rep.string()},
          std::to_string(t.hold));
  job.reached(t.hold);
  job.mctl_ok({"resize", "+2", jobid});
  job.go(t.hold);
  job.finish();
  *final_line = job.final_line();
  return rep;
}

void protocol_atomicity() {
  std::mt19937_64 rng(base_seed() + 1);
  for (int trial = 0; trial < 20; ++trial) {
    TempDir dir("acc1");
    auto t = traffic_trial(rng);
    std::string ctx = "trial " + std::to_string(trial) + " seed " + std::to_string(t.seed);
    std::string final_line;
    auto rep = grow_under_traffic(dir, "atom", t, &final_line);
    for (Rank r = 0; r < 6; ++r) {
      auto rr = report(rep, r);
      std::string rc = ctx + " rank " + std::to_string(r);
      expect_field(rr, "notices", r < 4 ? "1" : "0", rc);
      expect_field(rr, "joined-late", r < 4 ? "0" : "1", rc);
      expect_field(rr, "version", "v1", rc);
      expect_field(rr, "size", "6", rc);
    }
    expect(final_line == "version v1 size 6 pending none", ctx + ": final status " + final_line);
  }
}

void no_message_loss() {
  std::mt19937_64 rng(base_seed() + 8);
  for (int trial = 0; trial < 20; ++trial) {
    TempDir dir("acc8");
    auto t = traffic_trial(rng);
    std::string ctx = "trial " + std::to_string(trial) + " seed " + std::to_string(t.seed);
    std::string final_line;
    auto rep = grow_under_traffic(dir, "loss", t, &final_line);
    std::uint64_t received = 0;
    for (Rank r = 0; r < 6; ++r) {
      auto rr = report(rep, r);
      std::string rc = ctx + " rank " + std::to_string(r);
      expect_field(rr, "gaps", "0", rc);
      expect_field(rr, "dups", "0", rc);
      expect_field(rr, "stale", "0", rc);
      received += std::stoull(field(rr, "received"));
    }
    expect(received > 0, ctx + ": no traffic was exchanged");
  }
}

// ---- 2: fork -------------------------------------------------------------------------

void fork_contract() {
  for (auto [n, m] : {std::pair{2u, 1u}, std::pair{4u, 2u}, std::pair{4u, 4u}}) {
    TempDir dir("acc2");
    std::string ctx = "n=" + std::to_string(n) + " m=" + std::to_string(m);
    auto rep = dir / "rep";
    run_ok(dir, "fork", n, 2,
           {Programs::probe(), "--mode", "fork", "--forks", std::to_string(m), "--state-bytes", "4096", "--report-dir",
            rep.string()});
    for (Rank r = 0; r < n + m; ++r) {
      auto rr = report(rep, r);
      std::string rc = ctx + " rank " + std::to_string(r);
      expect_field(rr, "stage0-fork", r < n ? std::to_string(m) : "0", rc);
      expect_field(rr, "stage0-children", range_list(n, n + m), rc);
      expect_field(rr, "size", std::to_string(n + m), rc);
      if (r >= n) expect_field(rr, "stage0-clone-ok", "1", rc);
    }
  }
  struct Bad {
    std::uint32_t n;
    std::string forks, mismatch, code;
  };
  for (const auto& bad : {Bad{4, "2", "1", "-1"}, Bad{2, "3", "-1", "-2"}}) {
    TempDir dir("acc2");
    auto rep = dir / "rep";
    run_ok(dir, "badfork", bad.n, 1,
           {Programs::probe(), "--mode", "fork", "--forks", bad.forks, "--mismatch-rank", bad.mismatch, "--report-dir",
            rep.string()});
    for (Rank r = 0; r < bad.n; ++r) {
      auto rr = report(rep, r);
      std::string rc = "expected " + bad.code + " rank " + std::to_string(r);
      expect_field(rr, "stage0-fork", bad.code, rc);
      expect_field(rr, "version", "v0", rc);
    }
    expect(!fs::exists(rep / ("rank" + std::to_string(bad.n) + ".txt")), "a failed fork started a child");
  }
}

// ---- 3: spawn-merge --------------------------------------------------------------------

void spawn_merge() {
  {
    TempDir dir("acc3");
    auto rep = dir / "rep";
    std::vector<std::string> prog{Programs::probe(), "--iters", "4", "--expect-size", "6", "--report-dir", rep.string()};
    Job job(dir, "sm", 4, 2, prog, "2");
    job.reached(2);
    std::vector<std::string> cmd{"spawn-merge", "2", "sm", "--"};
    cmd.insert(cmd.end(), prog.begin(), prog.end());
    job.mctl_ok(cmd);
    job.go(2);
    job.finish();
    for (Rank r = 0; r < 6; ++r) {
      auto rr = report(rep, r);
      std::string rc = "rank " + std::to_string(r);
      if (r < 4) expect_field(rr, "rw-null-start", "1", rc);
      expect_field(rr, "rw-null-end", "0", rc);
      expect_field(rr, "rw-members", "0,1,2,3,4,5", rc);
      expect_field(rr, "version", "v1", rc);
    }
  }
  {
    TempDir dir("acc3");
    const int k = 5;
    auto rep = dir / "rep";
    std::vector<std::string> prog{Programs::demo_relax(), "--poll-resized", "--iters", "10", "--grid", "40", "--seed",
                                  "9", "--emit", (dir / "out.txt").string(), "--report-dir", rep.string()};
    Job job(dir, "poll", 4, 1, prog, std::to_string(k));
    job.reached(k);
    std::vector<std::string> cmd{"spawn-merge", "2", "poll", "--"};
    cmd.insert(cmd.end(), prog.begin(), prog.end());
    job.mctl_ok(cmd);
    job.go(k);
    job.finish();
    for (Rank r = 0; r < 4; ++r) {
      auto at = std::stoi(field(report(rep, r), "detected-at"));
      expect(at == k || at == k + 1, "rank " + std::to_string(r) + " detected the merge at iteration " +
                                         std::to_string(at) + ", held at " + std::to_string(k));
    }
    std::vector<double> got;
    for (const auto& l : read_lines(dir / "out.txt")) got.push_back(std::strtod(l.c_str(), nullptr));
    expect(got == oracle_relax(demo::initial_grid<double>(40, 9), 10), "polling demo result differs from the oracle");
  }
}

// ---- 4: versioned communicators ---------------------------------------------------------

void versioned_communicators() {
  {
    TempDir dir("acc4");
    auto rep = dir / "rep";
    Job job(dir, "two", 3, 1, {Programs::probe(), "--iters", "4", "--expect-size", "6", "--report-dir", rep.string()},
            "1,3");
    job.reached(1);
    job.mctl_ok({"resize", "+2", "two"});
    job.go(1);
    job.reached(3);
    job.mctl_ok({"resize", "+1", "two"});
    job.go(3);
    job.finish();
    for (Rank r = 0; r < 6; ++r) {
      auto rr = report(rep, r);
      std::string rc = "rank " + std::to_string(r);
      expect_field(rr, "members-v0", "0,1,2", rc);
      expect_field(rr, "members-v1", "0,1,2,3,4", rc);
      expect_field(rr, "members-v2", "0,1,2,3,4,5", rc);
      expect_field(rr, "members-latest", field(rr, "members-v2"), rc);
      if (r < 3) {
        expect_field(rr, "parents-start", "null", rc);
        expect_field(rr, "children-start", "null", rc);
      }
    }
  }
  {
    TempDir dir("acc4");
    auto rep = dir / "rep";
    run_ok(dir, "forks", 4, 2, {Programs::probe(), "--mode", "fork", "--forks", "2,1", "--report-dir", rep.string()});
    for (Rank r = 0; r < 7; ++r) {
      auto rr = report(rep, r);
      std::string rc = "fork rank " + std::to_string(r);
      expect_field(rr, "members-v0", "0,1,2,3", rc);
      expect_field(rr, "members-v1", "0,1,2,3,4,5", rc);
      expect_field(rr, "members-v2", "0,1,2,3,4,5,6", rc);
      expect_field(rr, "children-v1", "4,5", rc);
      expect_field(rr, "children-v2", "6", rc);
      expect_field(rr, "parents-v1", "0,1,2,3", rc);
      if (r < 4) {
        expect_field(rr, "parents-start", "null", rc);
        expect_field(rr, "children-start", "null", rc);
      }
    }
  }
}

// ---- 5: checkpoint-grow equivalence --------------------------------------------------------

std::vector<std::string> emitted(const fs::path& p) {
  auto lines = read_lines(p);
  expect(!lines.empty(), "no output in " + p.filename().string());
  return lines;
}

void same_vectors(const std::vector<std::string>& a, const std::vector<std::string>& b, bool integer,
                  const std::string& what) {
  expect(a.size() == b.size(), what + ": lengths differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (integer) {
      expect(a[i] == b[i], what + ": index " + std::to_string(i) + " " + a[i] + " vs " + b[i]);
    } else {
      double x = std::strtod(a[i].c_str(), nullptr), y = std::strtod(b[i].c_str(), nullptr);
      expect(std::fabs(x - y) <= 1e-12, what + ": index " + std::to_string(i) + " " + a[i] + " vs " + b[i]);
    }
  }
}

void checkpoint_grow_equivalence() {
  const int iters = 12;
  for (bool integer : {false, true}) {
    TempDir dir("acc5");
    std::vector<std::string> prog{Programs::demo_relax(), "--iters", std::to_string(iters), "--grid", "30", "--seed",
                                  "11"};
    if (integer) prog.push_back("--integer");
    auto with = [&](std::initializer_list<std::string> extra) {
      auto p = prog;
      p.insert(p.end(), extra);
      return p;
    };
    std::string kind = integer ? "integer" : "float";
    run_ok(dir, "base", 4, 2, with({"--emit", (dir / "base.txt").string()}));
    auto base = emitted(dir / "base.txt");

    for (int k : {1, iters / 2, iters}) {
      std::string ks = std::to_string(k), ctx = kind + " k=" + ks;
      std::string ck_id = "ck" + ks;
      {
        Job job(dir, ck_id, 4, 2, with({"--emit", (dir / (ck_id + ".txt")).string()}), ks);
        job.reached(k);
        Background ck({Programs::mctl(), "--run-dir", (dir / "run").string(), "checkpoint", ck_id},
                      dir / (ck_id + "-mctl.log"));
        expect(eventually([&] { return job.status().find("checkpoint pending") != std::string::npos; }),
               ctx + ": checkpoint request never registered");
        job.go(k);
        expect(ck.wait(30s) == 0, ctx + ": mctl checkpoint failed: " + ck.log());
        job.finish();
      }
      auto restart_id = "rs" + ks;
      Job restarted(dir, restart_id, 6, 2, with({"--emit", (dir / (restart_id + ".txt")).string()}), "",
                    {"--restart", (dir / "ckpt" / ck_id).string()});
      restarted.finish();
      expect(restarted.final_line() == "version v1 size 6 pending none", ctx + ": restart ended at " + restarted.final_line());

      auto live_id = "live" + ks;
      Job live(dir, live_id, 4, 2, with({"--emit", (dir / (live_id + ".txt")).string()}), ks);
      live.reached(k);
      live.mctl_ok({"resize", "+2", live_id});
      live.go(k);
      live.finish();
      expect(live.final_line() == "version v1 size 6 pending none", ctx + ": live grow ended at " + live.final_line());

      same_vectors(base, emitted(dir / (restart_id + ".txt")), integer, ctx + " restart vs baseline");
      same_vectors(base, emitted(dir / (live_id + ".txt")), integer, ctx + " live grow vs baseline");
    }
  }
}

// ---- 6: oracle equivalence ---------------------------------------------------------------

template <class T>
std::vector<std::string> oracle_lines(std::size_t grid, std::uint64_t seed, int iters) {
  auto u = oracle_relax(demo::initial_grid<T>(grid, seed), iters);
  std::vector<std::string> out;
  char buf[64];
  for (T v : u) {
    if constexpr (std::is_same_v<T, double>) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
    } else {
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    }
    out.emplace_back(buf);
  }
  return out;
}

void oracle_equivalence() {
  std::mt19937_64 rng(base_seed() + 6);
  TempDir dir("acc6");
  for (int i = 0; i < 100; ++i) {
    std::size_t grid = 1 + rng() % 64;
    int iters = static_cast<int>(rng() % 51);
    std::uint64_t seed = rng() % 4 == 0 ? 0 : rng() % 100000;
    auto n = static_cast<std::uint32_t>(1 + rng() % std::min<std::size_t>(6, grid));
    bool integer = rng() & 1;
    std::string ctx = "instance " + std::to_string(i) + " grid " + std::to_string(grid) + " iters " +
                      std::to_string(iters) + " n " + std::to_string(n) + (integer ? " integer" : " float");
    auto out = dir / ("out" + std::to_string(i) + ".txt");
    std::vector<std::string> prog{Programs::demo_relax(), "--iters", std::to_string(iters), "--grid",
                                  std::to_string(grid), "--seed", std::to_string(seed), "--emit", out.string()};
    if (integer) prog.push_back("--integer");
    run_ok(dir, "o" + std::to_string(i), n, 1 + static_cast<std::uint32_t>(rng() % 2), prog);
    auto want = integer ? oracle_lines<std::int64_t>(grid, seed, iters) : oracle_lines<double>(grid, seed, iters);
    expect(read_lines(out) == want, ctx + ": differs from the oracle");
  }
}

// ---- 7: codec and image round trips ----------------------------------------------------------

void codec_round_trips() {
  Gen g(base_seed() + 7);
  for (int i = 0; i < 2000; ++i) {
    auto m = g.message();
    expect(wire::decode(wire::encode(m)) == m, "wire message " + std::to_string(i) + " did not round trip");
  }
  for (std::size_t k = 0; k < std::variant_size_v<wire::Message>; ++k) {
    auto m = g.message(k);
    expect(wire::decode(wire::encode(m)) == m, "message kind index " + std::to_string(k) + " did not round trip");
  }
  for (int i = 0; i < 1000; ++i) {
    auto img = g.image();
    expect(ckpt::decode_image(ckpt::encode_image(img)) == img, "image " + std::to_string(i) + " did not round trip");
  }
  for (int i = 0; i < 1000; ++i) {
    auto state = g.bytes(4096);
    auto meta = g.metadata();
    auto r = ckpt::restore(ckpt::decode_image(ckpt::encode_image(ckpt::snapshot(state, meta))), {});
    expect(r.state == state && r.metadata == meta, "restore(snapshot) case " + std::to_string(i) + " differs");
  }
}

struct Criterion {
  int id;
  const char* name;
  void (*check)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "grow commits atomically under load", protocol_atomicity},
      {2, "fork return values, children and cloned state", fork_contract},
      {3, "spawn-merge resized world and polling detection", spawn_merge},
      {4, "versioned communicator history", versioned_communicators},
      {5, "checkpoint-restart and live grow match uninterrupted runs", checkpoint_grow_equivalence},
      {6, "randomized relaxation matches the sequential oracle", oracle_equivalence},
      {7, "wire and checkpoint image round trips", codec_round_trips},
      {8, "no message loss across a grow", no_message_loss},
  };
  std::cout << "seed " << base_seed() << std::endl;
  int failed = 0;
  for (const auto& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    std::string detail;
    try {
      c.check();
    } catch (const Failure& f) {
      detail = f.what;
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (detail.empty() && secs > 60) detail = "took longer than 60s";
    char timing[32];
    std::snprintf(timing, sizeof timing, "(%.1fs)", secs);
    if (detail.empty()) {
      std::cout << "PASS " << c.id << " " << c.name << " " << timing << std::endl;
    } else {
      ++failed;
      std::cout << "FAIL " << c.id << " " << c.name << " " << timing << ": " << detail << std::endl;
    }
  }
  return failed == 0 ? 0 : 1;
}
