// Operator requests to a running job's controller.
#include <iostream>

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "elastic/job.hpp"
#include "elastic/orchestrator.hpp"

namespace {

using namespace elastic;

std::uint32_t parse_count(std::string text) {
  if (!text.empty() && text[0] == '+') text.erase(0, 1);
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw Error(Errc::invalid_m, "bad count '" + text + "'");
  return static_cast<std::uint32_t>(v);
}

int print_reply(const wire::Message& msg) {
  if (const auto* r = std::get_if<wire::Reply>(&msg)) {
    if (auto e = wire::reply_error(*r)) {
      std::cerr << errc_name(*e) << ": " << r->text << "\n";
      return 1;
    }
    std::cout << r->text << "\n";
    return 0;
  }
  if (const auto* s = std::get_if<wire::StatusRep>(&msg)) {
    std::cout << format_status(s->report);
    return 0;
  }
  std::cerr << "unexpected answer: " << wire::kind_name(wire::kind_of(msg)) << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  cli::init_logging();
  auto [opts, command] = cli::split_command(argc, argv);

  CLI::App app{"mctl: control a running elastic job"};
  app.require_subcommand(1);
  std::string run_dir = "run";
  std::string jobid, count;
  long timeout_ms = 0;
  app.add_option("--run-dir", run_dir, "directory holding <jobid>.ctl");

  auto* resize = app.add_subcommand("resize", "grow the world by M ranks");
  resize->add_option("count", count, "+M")->required();
  resize->add_option("jobid", jobid)->required();

  auto* spawn = app.add_subcommand("spawn-merge", "spawn M ranks running the command after -- and merge them");
  spawn->add_option("count", count, "M")->required();
  spawn->add_option("jobid", jobid)->required();

  auto* checkpoint = app.add_subcommand("checkpoint", "write whole-world checkpoint images");
  checkpoint->add_option("jobid", jobid)->required();
  checkpoint->add_option("--timeout", timeout_ms, "ms to wait for the world to quiesce");

  auto* status = app.add_subcommand("status", "print the job status");
  status->add_option("jobid", jobid)->required();

  std::vector<const char*> cargs;
  for (auto& o : opts) cargs.push_back(o.c_str());
  CLI11_PARSE(app, static_cast<int>(cargs.size()), cargs.data());

  try {
    auto ep = job::read_ctl(run_dir, jobid);
    auto wait = std::chrono::milliseconds(10000);
    wire::Message req;
    if (*resize) {
      req = wire::ResizeReq{parse_count(count)};
    } else if (*spawn) {
      req = wire::SpawnReq{parse_count(count), command, 0, wire::kNoRank};
    } else if (*checkpoint) {
      req = wire::CkptWorldReq{static_cast<std::uint32_t>(timeout_ms)};
      wait = std::chrono::milliseconds(timeout_ms > 0 ? timeout_ms + 5000 : 60000);
    } else {
      req = wire::StatusReq{};
    }
    return print_reply(job::request(ep, req, wait));
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
