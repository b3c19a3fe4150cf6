// End-to-end tests through mrun, mctl, the daemons and the demo programs.

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <regex>

#include "elastic/checkpoint.hpp"
#include "grid.hpp"
#include "support/harness.hpp"
#include "support/oracle.hpp"

using namespace elastic;
using namespace elastic::testing;

namespace {

std::vector<double> read_doubles(const fs::path& p) {
  std::vector<double> out;
  for (const auto& line : read_lines(p)) out.push_back(std::strtod(line.c_str(), nullptr));
  return out;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

/// Index of the first trace line starting with `prefix`, or -1.
long trace_index(const std::vector<std::string>& trace, const std::string& prefix) {
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (trace[i].rfind(prefix, 0) == 0) return static_cast<long>(i);
  }
  return -1;
}

/// A job whose rank 0 pauses at the given iterations until released.
class HeldJob {
 public:
  HeldJob(const TempDir& dir, const std::string& jobid, std::uint32_t n, std::uint32_t nodes,
          std::vector<std::string> program, const std::string& hold_at)
      : dir_(dir), jobid_(jobid), hold_(dir / ("hold-" + jobid)) {
    fs::create_directories(hold_);
    program.insert(program.end(), {"--hold-at", hold_at, "--hold-dir", hold_.string()});
    auto argv = mrun_args(dir, jobid, n, nodes);
    argv.push_back("--");
    argv.insert(argv.end(), program.begin(), program.end());
    bg_ = std::make_unique<Background>(argv, dir / (jobid + ".log"));
  }
  bool reached(int k) { return wait_for_file(hold_ / ("reached-" + std::to_string(k))); }
  void go(int k) { touch(hold_ / ("go-" + std::to_string(k))); }
  Captured mctl(std::initializer_list<std::string> args) {
    std::vector<std::string> argv{Programs::mctl(), "--run-dir", (dir_ / "run").string()};
    argv.insert(argv.end(), args.begin(), args.end());
    return run(argv);
  }
  std::string status() { return mctl({"status", jobid_}).output; }
  int wait() { return bg_->wait(60s); }
  std::string log() const { return bg_->log(); }
  fs::path final_file() const { return dir_ / "run" / (jobid_ + ".final"); }
  fs::path trace_file() const { return dir_ / "run" / (jobid_ + ".trace"); }

 private:
  const TempDir& dir_;
  std::string jobid_;
  fs::path hold_;
  std::unique_ptr<Background> bg_;
};

Captured mrun(const TempDir& dir, const std::string& jobid, std::uint32_t n, std::uint32_t nodes,
              const std::vector<std::string>& program, std::vector<std::string> extra = {}) {
  auto argv = mrun_args(dir, jobid, n, nodes);
  argv.insert(argv.end(), extra.begin(), extra.end());
  argv.push_back("--");
  argv.insert(argv.end(), program.begin(), program.end());
  return run(argv, 60s);
}

}  // namespace

TEST_CASE("mrun runs demo_relax over two nodes and rank 0 prints the oracle result") {
  TempDir dir("it");
  auto out = mrun(dir, "relax", 4, 2, {Programs::demo_relax(), "--iters", "100", "--grid", "24"});
  REQUIRE(out.code == 0);
  std::vector<double> printed;
  std::istringstream in(out.output);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("mrun:", 0) == 0 || line.empty()) continue;
    printed.push_back(std::strtod(line.c_str(), nullptr));
  }
  CHECK(printed.size() == 24);
  auto want = oracle_relax(demo::initial_grid<double>(24, 0), 100);
  // Default stream precision is not exact; compare loosely here, exactly via --emit elsewhere.
  for (std::size_t i = 0; i < std::min(printed.size(), want.size()); ++i) CHECK(printed[i] == doctest::Approx(want[i]));
}

TEST_CASE("two nodes and four ranks: process tree, status and start ordering") {
  TempDir dir("it");
  HeldJob job(dir, "tree", 4, 2, {Programs::probe(), "--iters", "2"}, "1");
  REQUIRE(job.reached(1));
  auto status = job.status();
  CHECK(first_line(status) == "version v0 size 4 pending none");
  CHECK(status.find("heads 2 faults 4") != std::string::npos);
  for (int r = 0; r < 4; ++r) {
    CHECK(status.find("rank " + std::to_string(r) + " node " + std::to_string(r % 2) + " live") != std::string::npos);
  }
  job.go(1);
  REQUIRE(job.wait() == 0);
  auto trace = read_lines(job.trace_file());
  for (int r = 0; r < 4; ++r) {
    CAPTURE(r);
    long head = trace_index(trace, "head-joined " + std::to_string(r % 2));
    long fault = trace_index(trace, "fault-registered " + std::to_string(r));
    long rank = trace_index(trace, "rank-joined " + std::to_string(r));
    REQUIRE(head >= 0);
    CHECK(head < fault);
    CHECK(fault < rank);
  }
  CHECK(first_line(slurp(job.final_file())) == "version v0 size 4 pending none");
}

TEST_CASE("smallest world: one node, one rank") {
  TempDir dir("it");
  auto out = mrun(dir, "one", 1, 1, {Programs::probe(), "--iters", "1", "--report-dir", (dir / "rep").string()});
  CHECK(out.code == 0);
  auto final_text = slurp(dir / "run" / "one.final");
  CHECK(final_text.find("heads 1") != std::string::npos);
  CHECK(read_report(dir / "rep" / "rank0.txt")["size"] == "1");
}

TEST_CASE("missing head executable is LaunchFailed(head)") {
  TempDir dir("it");
  auto out = mrun(dir, "nohead", 2, 1, {Programs::probe()}, {"--head-exe", (dir / "missing").string()});
  CHECK(out.code == 1);
  CHECK(out.output.find("LaunchFailed(head)") != std::string::npos);
}

TEST_CASE("a rank that exits before the world forms fails the launch") {
  TempDir dir("it");
  auto out = mrun(dir, "early", 2, 1, {"/bin/sh", "-c", "exit 3"});
  CHECK(out.code == 1);
  CHECK(out.output.find("LaunchFailed(rank)") != std::string::npos);
}

TEST_CASE("a committed rank's nonzero exit becomes the job's exit code") {
  TempDir dir("it");
  auto out = mrun(dir, "crash", 2, 1,
                  {Programs::demo_fork_refine(), "--iters", "2", "--fork-at", "1", "--fork-m", "1", "--mismatch-rank", "1"});
  CHECK(out.code == 4);
}

TEST_CASE("mctl status idle and mid-grow") {
  TempDir dir("it");
  HeldJob job(dir, "st", 4, 1, {Programs::probe(), "--iters", "3", "--expect-size", "6"}, "1");
  REQUIRE(job.reached(1));
  CHECK(first_line(job.status()) == "version v0 size 4 pending none");
  auto resize = job.mctl({"resize", "+2", "st"});
  CHECK(resize.code == 0);
  auto mid = first_line(job.status());
  std::smatch m;
  REQUIRE(std::regex_match(mid, m, std::regex(R"(version v0 size 4 pending GROW m=2 joined (\d)/6)")));
  CHECK(std::stoi(m[1]) <= 6);
  auto again = job.mctl({"resize", "+1", "st"});
  CHECK(again.code == 1);
  CHECK(again.output.find("ResizeInProgress") != std::string::npos);
  job.go(1);
  REQUIRE(job.wait() == 0);
  CHECK(first_line(slurp(job.final_file())) == "version v1 size 6 pending none");
}

TEST_CASE("mctl against an unknown job is JobNotFound") {
  TempDir dir("it");
  auto out = run({Programs::mctl(), "--run-dir", (dir / "run").string(), "status", "ghost"});
  CHECK(out.code == 1);
  CHECK(out.output.find("JobNotFound") != std::string::npos);
}

TEST_CASE("resize 2 to 4 at iteration 50 of 100 gives the never-resized result") {
  TempDir dir("it");
  std::vector<std::string> prog{Programs::demo_relax(), "--iters", "100", "--grid", "40", "--seed", "7"};
  auto base = prog;
  base.insert(base.end(), {"--emit", (dir / "base.txt").string()});
  REQUIRE(mrun(dir, "base", 2, 1, base).code == 0);

  auto grown = prog;
  grown.insert(grown.end(), {"--emit", (dir / "grown.txt").string()});
  HeldJob job(dir, "grown", 2, 1, grown, "50");
  REQUIRE(job.reached(50));
  REQUIRE(job.mctl({"resize", "+2", "grown"}).code == 0);
  job.go(50);
  REQUIRE(job.wait() == 0);
  CHECK(slurp(dir / "grown.txt") == slurp(dir / "base.txt"));
  CHECK(read_doubles(dir / "base.txt") == oracle_relax(demo::initial_grid<double>(40, 7), 100));
  CHECK(first_line(slurp(job.final_file())) == "version v1 size 4 pending none");
}

TEST_CASE("fork_refine: 2 ranks fork 2 at iteration 10, grid 8 to 16") {
  TempDir dir("it");
  auto out = mrun(dir, "refine", 2, 1,
                  {Programs::demo_fork_refine(), "--iters", "20", "--fork-at", "10", "--fork-m", "2", "--grid", "8",
                   "--fine", "16", "--seed", "3", "--emit", (dir / "fine.txt").string(), "--report-dir",
                   (dir / "rep").string()});
  REQUIRE(out.code == 0);
  auto coarse = oracle_relax(demo::initial_grid<double>(8, 3), 10);
  auto want = oracle_relax(oracle_interpolate(coarse, 16), 10);
  CHECK(read_doubles(dir / "fine.txt") == want);
  for (int r = 0; r < 4; ++r) {
    auto rep = read_report(dir / "rep" / ("rank" + std::to_string(r) + ".txt"));
    CHECK(rep["size"] == "4");
    CHECK(rep["clone-ok"] == "1");
    CHECK(rep["fork"] == (r < 2 ? "2" : "0"));
  }
}

TEST_CASE("fork_refine exits with a distinct code per fork failure") {
  TempDir dir("it");
  CHECK(mrun(dir, "mm", 4, 1, {Programs::demo_fork_refine(), "--mismatch-rank", "2", "--fork-m", "2"}).code == 4);
  CHECK(mrun(dir, "oor", 2, 1, {Programs::demo_fork_refine(), "--fork-m", "3"}).code == 5);
  CHECK(mrun(dir, "cc", 2, 1, {Programs::probe(), "--mode", "fork", "--forks", "1", "--crash-child", "9",
                                 "--report-dir", (dir / "rep").string()}).code == 0);
  for (int r = 0; r < 2; ++r) {
    auto rep = read_report(dir / "rep" / ("rank" + std::to_string(r) + ".txt"));
    CHECK(rep["stage0-fork"] == "-3");
    CHECK(rep["version"] == "v0");
  }
}

TEST_CASE("two forks: status reports v2 and CHILDREN keeps its history") {
  TempDir dir("it");
  auto out = mrun(dir, "twofork", 4, 2,
                  {Programs::probe(), "--mode", "fork", "--forks", "2,1", "--report-dir", (dir / "rep").string()});
  REQUIRE(out.code == 0);
  CHECK(first_line(slurp(dir / "run" / "twofork.final")) == "version v2 size 7 pending none");
  for (int r = 0; r < 7; ++r) {
    auto rep = read_report(dir / "rep" / ("rank" + std::to_string(r) + ".txt"));
    CHECK(rep["children-v1"] == "4,5");
    CHECK(rep["children-v2"] == "6");
    CHECK(rep["parents-v2"] == "0,1,2,3,4,5");
  }
  auto child = read_report(dir / "rep" / "rank6.txt");
  CHECK(child["stage1-clone-ok"] == "1");
}

TEST_CASE("a crashing new rank clears the pending grow and old ranks stay at v0") {
  TempDir dir("it");
  HeldJob job(dir, "short", 4, 1,
              {Programs::probe(), "--iters", "3", "--crash-if-new", "9", "--report-dir", (dir / "rep").string()}, "1");
  REQUIRE(job.reached(1));
  REQUIRE(job.mctl({"resize", "+2", "short"}).code == 0);
  REQUIRE(eventually([&] { return slurp(job.trace_file()).find("abort v1") != std::string::npos; }));
  job.go(1);
  REQUIRE(job.wait() == 0);
  CHECK(slurp(job.trace_file()).find("abort v1 SpawnShortfall") != std::string::npos);
  for (int r = 0; r < 4; ++r) {
    auto rep = read_report(dir / "rep" / ("rank" + std::to_string(r) + ".txt"));
    CHECK(rep["version"] == "v0");
    CHECK(rep["size"] == "4");
  }
  CHECK(first_line(slurp(job.final_file())) == "version v0 size 4 pending none");
}

TEST_CASE("comm_spawn from the program, and of a missing executable") {
  TempDir dir("it");
  auto ok = mrun(dir, "sp", 2, 1, {Programs::probe(), "--mode", "spawn", "--spawn", "2", "--report-dir", (dir / "rep").string()});
  REQUIRE(ok.code == 0);
  for (int r = 0; r < 4; ++r) {
    auto rep = read_report(dir / "rep" / ("rank" + std::to_string(r) + ".txt"));
    CHECK(rep["merged"] == "0,1,2,3");
    CHECK(rep["size"] == "4");
  }
  auto bad = mrun(dir, "spbad", 2, 1,
                  {Programs::probe(), "--mode", "spawn", "--spawn-cmd", (dir / "nope").string(), "--report-dir",
                   (dir / "rep2").string()});
  CHECK(bad.code == 0);
  for (int r = 0; r < 2; ++r) {
    auto rep = read_report(dir / "rep2" / ("rank" + std::to_string(r) + ".txt"));
    CHECK(rep["error"] == "SpawnFailed");
    CHECK(rep["version"] == "v0");
  }
}

TEST_CASE("checkpoint, restart at 6, and the grow-only restart contract") {
  TempDir dir("it");
  std::vector<std::string> prog{Programs::demo_relax(), "--iters", "12", "--grid", "30", "--integer", "--seed", "5"};
  auto held = prog;
  held.insert(held.end(), {"--emit", (dir / "orig.txt").string()});
  HeldJob job(dir, "ck", 4, 2, held, "6");
  REQUIRE(job.reached(6));
  Background ck({Programs::mctl(), "--run-dir", (dir / "run").string(), "checkpoint", "ck"}, dir / "ck.log");
  REQUIRE(eventually([&] { return job.status().find("checkpoint pending") != std::string::npos; }));
  job.go(6);
  REQUIRE(ck.wait() == 0);
  REQUIRE(job.wait() == 0);
  auto ckdir = dir / "ckpt" / "ck";
  auto manifest = ckpt::read_manifest(ckdir);
  CHECK(manifest.version == VersionTag{0});
  CHECK(manifest.size == 4);
  CHECK(manifest.files.size() == 4);

  auto restarted = prog;
  restarted.insert(restarted.end(), {"--emit", (dir / "restart.txt").string(), "--report-dir", (dir / "rep").string()});
  auto out = mrun(dir, "ck-r", 6, 1, restarted, {"--restart", ckdir.string()});
  REQUIRE(out.code == 0);
  CHECK(slurp(dir / "restart.txt") == slurp(dir / "orig.txt"));
  for (int r = 0; r < 6; ++r) {
    auto rep = read_report(dir / "rep" / ("rank" + std::to_string(r) + ".txt"));
    CHECK(rep["notices"] == (r < 4 ? "1" : "0"));
    CHECK(rep["restored"] == (r < 4 ? "1" : "0"));
    CHECK(rep["size"] == "6");
  }
  CHECK(first_line(slurp(dir / "run" / "ck-r.final")) == "version v1 size 6 pending none");

  CHECK(mrun(dir, "ck-shrink", 2, 1, prog, {"--restart", ckdir.string()}).code == 3);
  fs::create_directories(dir / "broken");
  std::ofstream(dir / "broken" / "manifest") << "version v0 size 2\nrank 0 rank0.img\n";
  CHECK(mrun(dir, "ck-broken", 4, 1, prog, {"--restart", (dir / "broken").string()}).code == 2);
}

TEST_CASE("checkpoint with a rank that never reaches a barrier is QuiesceTimeout") {
  TempDir dir("it");
  HeldJob job(dir, "qt", 2, 1, {Programs::probe(), "--iters", "2"}, "1");
  REQUIRE(job.reached(1));
  auto out = job.mctl({"checkpoint", "qt", "--timeout", "300"});
  CHECK(out.code == 1);
  CHECK(out.output.find("QuiesceTimeout") != std::string::npos);
  job.go(1);
  CHECK(job.wait() == 0);
}
