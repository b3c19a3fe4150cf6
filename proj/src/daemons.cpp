#include "elastic/daemons.hpp"

#include <signal.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "elastic/net.hpp"
#include "elastic/process.hpp"
#include "elastic/runtime.hpp"

namespace elastic {

namespace {

constexpr auto kConnectTimeout = std::chrono::milliseconds(10000);
constexpr auto kTick = std::chrono::milliseconds(10);

net::Link register_with(const Endpoint& controller, wire::Join join) {
  auto link = net::connect(controller, kConnectTimeout);
  link.send(join);
  auto ack = link.recv_for(kConnectTimeout);
  if (!ack || !std::holds_alternative<wire::JoinAck>(*ack)) {
    throw Error(Errc::launch_failed, "controller did not acknowledge registration");
  }
  return link;
}

}  // namespace

int run_head(const Endpoint& controller, std::uint32_t node, const std::filesystem::path& daemon_exe) {
  net::Link link;
  try {
    link = register_with(controller, wire::Join{wire::Role::head, node, {}, 0, 0});
  } catch (const Error& e) {
    spdlog::error("head {}: {}", node, e.what());
    return 1;
  }
  struct Child {
    pid_t pid;
    Rank rank;
  };
  std::vector<Child> faults;
  bool finalizing = false;
  std::chrono::steady_clock::time_point finalize_deadline;

  auto kill_all = [&faults] {
    for (auto& c : faults) ::kill(-c.pid, SIGKILL);
    for (auto& c : faults) proc::wait(c.pid);
    faults.clear();
  };

  bool open = true;
  for (;;) {
    if (net::wait_readable(link.fd(), kTick)) open = link.pump();
    while (auto msg = link.next()) {
      if (auto* l = std::get_if<wire::Launch>(&*msg)) {
        std::vector<std::string> argv{daemon_exe.string(), "fault", "--controller", controller.str(),
                                      "--rank", std::to_string(l->rank), "--"};
        argv.insert(argv.end(), l->command.begin(), l->command.end());
        proc::SpawnOptions opts;
        opts.env = l->env;
        opts.new_group = true;
        try {
          faults.push_back({proc::spawn(argv, opts), l->rank});
        } catch (const Error& e) {
          spdlog::error("head {}: cannot start fault daemon for rank {}: {}", node, l->rank, e.what());
          try {
            link.send(wire::RankExit{l->rank, 127});
          } catch (const Error&) {
          }
        }
      } else if (std::holds_alternative<wire::Finalize>(*msg)) {
        finalizing = true;
        finalize_deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
      }
    }
    if (!open) {
      kill_all();
      return finalizing ? 0 : 1;
    }
    std::erase_if(faults, [](const Child& c) { return proc::try_wait(c.pid).has_value(); });
    if (finalizing && (faults.empty() || std::chrono::steady_clock::now() > finalize_deadline)) {
      kill_all();
      return 0;
    }
  }
}

int run_fault(const Endpoint& controller, Rank rank, const std::vector<std::string>& command) {
  std::uint32_t launch_id = 0;
  if (const char* v = std::getenv(env_vars::launch_id)) launch_id = static_cast<std::uint32_t>(std::strtoul(v, nullptr, 10));
  net::Link link;
  try {
    link = register_with(controller, wire::Join{wire::Role::fault, rank, {}, 0, launch_id});
  } catch (const Error& e) {
    spdlog::error("fault {}: {}", rank, e.what());
    return 1;
  }
  pid_t pid = -1;
  try {
    pid = proc::spawn(command);
  } catch (const Error& e) {
    spdlog::error("fault {}: {}", rank, e.what());
    link.send(wire::RankExit{rank, 127});
    return 127;
  }
  for (;;) {
    if (auto code = proc::try_wait(pid)) {
      try {
        link.send(wire::RankExit{rank, *code});
      } catch (const Error&) {
      }
      return *code;
    }
    if (net::wait_readable(link.fd(), kTick)) {
      if (!link.pump()) {
        ::kill(pid, SIGKILL);
        return proc::wait(pid);
      }
    }
  }
}

}  // namespace elastic
