// Launches a job: controller in this process, one head daemon per logical node,
// one fault daemon per rank. Exit code: 0 when every rank exits 0, 1 on launch
// failure, 2 for an invalid restart manifest, 3 when a restart would shrink the
// world, otherwise the first nonzero rank exit code.
#include <iostream>

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "elastic/checkpoint.hpp"
#include "elastic/controller.hpp"
#include "elastic/job.hpp"
#include "elastic/process.hpp"

int main(int argc, char** argv) {
  elastic::cli::init_logging();
  auto [opts, command] = elastic::cli::split_command(argc, argv);

  CLI::App app{"mrun: launch an elastic job"};
  elastic::ControllerConfig cfg;
  std::string restart;
  std::string daemon = elastic::proc::sibling("elasticd").string();
  std::string head_exe;
  long launch_ms = 30000, join_ms = 30000, collective_ms = 30000;
  app.add_option("-n", cfg.n, "number of ranks (the target size on restart)")->required()->check(CLI::PositiveNumber);
  app.add_option("--nodes", cfg.nodes, "logical nodes on this machine")->check(CLI::PositiveNumber);
  app.add_option("--jobid", cfg.jobid, "job identifier (generated when omitted)");
  app.add_option("--run-dir", cfg.run_dir, "directory for control, trace and config files");
  app.add_option("--ckpt-dir", cfg.ckpt_root, "root for whole-world checkpoints");
  app.add_option("--restart", restart, "restart from this checkpoint directory");
  app.add_option("--daemon", daemon, "elasticd executable");
  app.add_option("--head-exe", head_exe, "head daemon executable (defaults to --daemon)");
  app.add_option("--launch-timeout", launch_ms, "ms for the initial world to form");
  app.add_option("--join-timeout", join_ms, "ms for new ranks of a resize to join");
  app.add_option("--collective-timeout", collective_ms, "ms for all ranks to call a collective");

  std::vector<const char*> cargs;
  for (auto& o : opts) cargs.push_back(o.c_str());
  CLI11_PARSE(app, static_cast<int>(cargs.size()), cargs.data());

  if (command.empty()) {
    std::cerr << "mrun: missing program after --\n";
    return 1;
  }
  cfg.command = command;
  if (cfg.jobid.empty()) cfg.jobid = elastic::job::make_jobid();
  cfg.launch_timeout = std::chrono::milliseconds(launch_ms);
  cfg.join_timeout = std::chrono::milliseconds(join_ms);
  cfg.collective_timeout = std::chrono::milliseconds(collective_ms);
  if (!restart.empty()) cfg.restart_dir = restart;

  elastic::ProcessBackend backend(head_exe.empty() ? daemon : head_exe, daemon);
  std::unique_ptr<elastic::Controller> controller;
  try {
    controller = std::make_unique<elastic::Controller>(cfg, backend);
  } catch (const elastic::Error& e) {
    std::cerr << "mrun: " << e.what() << "\n";
    switch (e.code()) {
      case elastic::Errc::manifest_invalid:
      case elastic::Errc::checkpoint_unavailable:
      case elastic::Errc::bad_magic:
      case elastic::Errc::truncated_image:
      case elastic::Errc::version_unsupported:
      case elastic::Errc::malformed_frame:
        return 2;
      case elastic::Errc::shrink_unsupported:
        return 3;
      default:
        return 1;
    }
  }
  std::cerr << "mrun: job " << cfg.jobid << " controller " << controller->endpoint().str() << "\n";
  int code = controller->run();
  if (code != 0) std::cerr << "mrun: job " << cfg.jobid << " exited with code " << code << "\n";
  return code;
}
