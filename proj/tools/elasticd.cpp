// Head and fault daemons started by the controller; not meant to be run by hand.
#include <CLI11.hpp>

#include "cli_util.hpp"
#include "elastic/daemons.hpp"
#include "elastic/process.hpp"

int main(int argc, char** argv) {
  elastic::cli::init_logging();
  auto [opts, command] = elastic::cli::split_command(argc, argv);

  CLI::App app{"elasticd: per-node head and per-rank fault daemon"};
  app.require_subcommand(1);
  std::string controller;
  std::uint32_t node = 0;
  std::uint32_t rank = 0;
  std::string daemon = elastic::proc::self_exe().string();

  auto* head = app.add_subcommand("head", "register a node and start fault daemons on request");
  head->add_option("--controller", controller, "controller host:port")->required();
  head->add_option("--node", node, "logical node index")->required();
  head->add_option("--daemon", daemon, "executable used for fault daemons");

  auto* fault = app.add_subcommand("fault", "register a rank, run it, and report its exit code");
  fault->add_option("--controller", controller, "controller host:port")->required();
  fault->add_option("--rank", rank, "rank to run")->required();

  std::vector<const char*> cargs;
  for (auto& o : opts) cargs.push_back(o.c_str());
  CLI11_PARSE(app, static_cast<int>(cargs.size()), cargs.data());

  try {
    auto ep = elastic::Endpoint::parse(controller);
    if (*head) return elastic::run_head(ep, node, daemon);
    if (command.empty()) {
      spdlog::error("fault: no command after --");
      return 2;
    }
    return elastic::run_fault(ep, rank, command);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
