// 1-D Jacobi relaxation that survives world growth, checkpoint/restart and
// spawn-merge. Rank 0 writes the final grid.

#include <cstdio>
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
  std::size_t grid = 64;
  std::uint64_t seed = 0;
  std::string emit;
  bool poll_resized = false;
  std::string hold_at;
  std::string hold_dir;
  std::string report_dir;
};

template <class T>
int run(const Options& opt) {
  Runtime rt;
  Segment<T> seg;
  std::uint64_t done = 0;
  rt.hooks().register_hook(ckpt::Phase::pre_checkpoint,
                           [&](ckpt::HookContext& ctx) { ctx.state = seg.serialize(done); });
  rt.init();

  HoldPoints hold{parse_int_list(opt.hold_at), opt.hold_dir};
  int notices = 0;
  int detected_at = -1;
  CommRef seen_rw = rt.resized_world();

  if (rt.restored()) {
    done = seg.deserialize(rt.state());
  } else if (rt.joined_late()) {
    // Data arrives from the owners under the previous view.
    auto prev = rt.history().at(VersionTag{rt.version().value - 1});
    seg.part = GridPartition::block(opt.grid, prev.size);
    notices += seg.repartition(rt, GridPartition::block(opt.grid, rt.size()), done);
    seen_rw = rt.resized_world();
  } else {
    if (opt.grid < rt.size()) {
      std::cerr << "demo_relax: grid of " << opt.grid << " points is smaller than the world\n";
      return 2;
    }
    seg.part = GridPartition::block(opt.grid, rt.size());
    auto u = initial_grid<T>(opt.grid, opt.seed);
    const Range own = seg.part.owned[rt.rank()];
    seg.values.assign(u.begin() + static_cast<std::ptrdiff_t>(own.begin),
                      u.begin() + static_cast<std::ptrdiff_t>(own.end));
  }
  rt.register_state(seg.serialize(done));

  auto sync = [&] {
    notices += resized(rt.barrier());
    for (;;) {
      bool grew;
      if (opt.poll_resized) {
        CommRef now = rt.resized_world();
        grew = now != seen_rw;
        seen_rw = now;
      } else {
        grew = rt.size() != seg.part.parts();
      }
      if (!grew) break;
      if (detected_at < 0) detected_at = static_cast<int>(done);
      notices += seg.repartition(rt, GridPartition::block(opt.grid, rt.size()), done);
    }
  };

  // The checkpoint was taken inside a sync; redo it so a restart grow commits
  // where late joiners expect it.
  if (rt.restored()) sync();
  while (done < static_cast<std::uint64_t>(opt.iters)) {
    notices += seg.relax(rt);
    ++done;
    hold.maybe_wait(rt.rank(), static_cast<int>(done));
    sync();
  }

  auto all = seg.gather(rt);
  if (rt.rank() == 0) {
    if (!opt.emit.empty()) {
      write_values(opt.emit, all);
    } else {
      for (T v : all) std::cout << v << '\n';
    }
  }
  std::ostringstream rep;
  rep << "rank " << rt.rank() << "\nnotices " << notices << "\nversion " << rt.version().str() << "\nsize "
      << rt.size() << "\njoined-late " << rt.joined_late() << "\nrestored " << rt.restored() << "\ndetected-at "
      << detected_at << "\n";
  write_report(opt.report_dir, rt.rank(), rep.str());
  rt.finalize();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  cli::init_logging();
  CLI::App app{"1-D Jacobi relaxation on an elastic world"};
  Options opt;
  bool integer = false;
  app.add_option("--iters", opt.iters, "Sweeps to perform")->check(CLI::NonNegativeNumber);
  app.add_option("--grid", opt.grid, "Grid points including the two fixed ends")->check(CLI::PositiveNumber);
  app.add_option("--seed", opt.seed, "Initial data seed; 0 gives the clamped membrane");
  app.add_option("--emit", opt.emit, "Write the final grid here, one value per line");
  app.add_flag("--integer", integer, "Integer grid with floor halving");
  app.add_flag("--poll-resized", opt.poll_resized, "Detect growth by polling RESIZED_WORLD");
  app.add_option("--hold-at", opt.hold_at, "Iterations at which rank 0 waits for a go file");
  app.add_option("--hold-dir", opt.hold_dir, "Directory for reached-<k>/go-<k> files");
  app.add_option("--report-dir", opt.report_dir, "Per-rank report directory");
  CLI11_PARSE(app, argc, argv);

  try {
    return integer ? run<std::int64_t>(opt) : run<double>(opt);
  } catch (const Error& e) {
    std::cerr << "demo_relax: " << e.what() << "\n";
    return 1;
  }
}
