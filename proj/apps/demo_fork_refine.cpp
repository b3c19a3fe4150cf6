// Relaxes on a coarse grid, forks m clones, then all ranks continue on a grid
// refined by linear interpolation. Fork failures exit with 3 + |code|.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "demo_common.hpp"

using namespace elastic;
using namespace elastic::demo;

namespace {

struct Options {
  int iters = 10;
  int fork_at = 5;
  std::uint32_t fork_m = 1;
  std::size_t grid = 8;
  std::size_t fine = 0;
  std::uint64_t seed = 0;
  std::string emit;
  int mismatch_rank = -1;
  std::string report_dir;
};

Bytes coarse_state(std::uint64_t done, const std::vector<double>& coarse) {
  ByteWriter w;
  w.u64(done);
  put_values(w, coarse);
  return std::move(w).take();
}

std::vector<double> broadcast_grid(Runtime& rt, std::vector<double> grid) {
  if (rt.rank() == 0) {
    ByteWriter w;
    put_values(w, grid);
    for (Rank r = 1; r < rt.size(); ++r) rt.send(r, tags::gather, w.bytes());
    return grid;
  }
  auto got = rt.recv(0, tags::gather);
  ByteReader r(got.payload);
  return get_values<double>(r);
}

int run(const Options& opt) {
  const std::size_t fine_n = opt.fine ? opt.fine : 2 * opt.grid;
  Runtime rt;
  rt.init();

  std::uint64_t done = 0;
  std::vector<double> coarse;
  if (!rt.fork_child()) {
    Segment<double> seg;
    seg.part = GridPartition::block(opt.grid, rt.size());
    auto u = initial_grid<double>(opt.grid, opt.seed);
    const Range own = seg.part.owned[rt.rank()];
    seg.values.assign(u.begin() + static_cast<std::ptrdiff_t>(own.begin),
                      u.begin() + static_cast<std::ptrdiff_t>(own.end));
    for (; done < static_cast<std::uint64_t>(opt.fork_at); ++done) {
      seg.relax(rt);
      rt.barrier();
    }
    coarse = broadcast_grid(rt, seg.gather(rt));
    rt.register_state(coarse_state(done, coarse));
  } else {
    ByteReader r(rt.state(), Errc::truncated_image);
    done = r.u64();
    coarse = get_values<double>(r);
  }
  const Bytes before = rt.state();

  std::uint32_t m = opt.fork_m;
  if (static_cast<int>(rt.rank()) == opt.mismatch_rank) ++m;
  int f = rt.fork(m);
  if (f < 0) {
    std::cerr << "demo_fork_refine: fork returned " << f << "\n";
    return 3 - f;
  }

  auto parents = rt.membership(rt.comm_parents());
  auto children = rt.membership(rt.comm_children());
  bool clone_ok = true;
  if (f > 0) {
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i] == rt.rank()) rt.send(children[i], tags::clone_check, before);
    }
  } else {
    auto it = std::find(children.begin(), children.end(), rt.rank());
    auto got = rt.recv(parents[static_cast<std::size_t>(it - children.begin())], tags::clone_check);
    clone_ok = got.payload == before;
    if (!clone_ok) std::cerr << "demo_fork_refine: rank " << rt.rank() << " inherited state differs\n";
  }

  Segment<double> seg;
  seg.part = GridPartition::block(fine_n, rt.size());
  const Range own = seg.part.owned[rt.rank()];
  for (std::size_t j = own.begin; j < own.end; ++j) seg.values.push_back(interpolate(coarse, fine_n, j));
  rt.replace_state(seg.serialize(done));

  for (; done < static_cast<std::uint64_t>(opt.iters); ++done) {
    seg.relax(rt);
    rt.barrier();
  }
  auto all = seg.gather(rt);
  if (rt.rank() == 0) {
    if (!opt.emit.empty()) {
      write_values(opt.emit, all);
    } else {
      for (double v : all) std::cout << v << '\n';
    }
  }
  std::ostringstream rep;
  rep << "rank " << rt.rank() << "\nfork " << f << "\nversion " << rt.version().str() << "\nsize " << rt.size()
      << "\nclone-ok " << clone_ok << "\n";
  write_report(opt.report_dir, rt.rank(), rep.str());
  rt.finalize();
  return clone_ok ? 0 : 7;
}

}  // namespace

int main(int argc, char** argv) {
  cli::init_logging();
  CLI::App app{"Coarse relaxation, fork, then refined relaxation"};
  Options opt;
  app.add_option("--iters", opt.iters, "Total sweeps")->check(CLI::NonNegativeNumber);
  app.add_option("--fork-at", opt.fork_at, "Coarse sweeps before the fork")->check(CLI::NonNegativeNumber);
  app.add_option("--fork-m", opt.fork_m, "Ranks to clone");
  app.add_option("--grid", opt.grid, "Coarse grid points")->check(CLI::Range(2, 1 << 24));
  app.add_option("--fine", opt.fine, "Fine grid points (default twice the coarse grid)");
  app.add_option("--seed", opt.seed, "Initial data seed; 0 gives the clamped membrane");
  app.add_option("--emit", opt.emit, "Write the final grid here, one value per line");
  app.add_option("--mismatch-rank", opt.mismatch_rank, "This rank asks for m+1 clones");
  app.add_option("--report-dir", opt.report_dir, "Per-rank report directory");
  CLI11_PARSE(app, argc, argv);
  if (opt.fork_at > opt.iters) {
    std::cerr << "demo_fork_refine: --fork-at exceeds --iters\n";
    return 2;
  }
  try {
    return run(opt);
  } catch (const Error& e) {
    std::cerr << "demo_fork_refine: " << e.what() << "\n";
    return 1;
  }
}
