#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <sys/types.h>

#include "elastic/wire.hpp"

namespace elastic {

struct ControllerConfig {
  std::string jobid;
  std::filesystem::path run_dir = "run";
  std::filesystem::path ckpt_root = "ckpt";  // whole-world images go to <ckpt_root>/<jobid>/
  std::uint32_t n = 1;                       // target world size (after growth, on restart)
  std::uint32_t nodes = 1;
  std::vector<std::string> command;
  std::optional<std::filesystem::path> restart_dir;
  std::chrono::milliseconds launch_timeout{30000};
  std::chrono::milliseconds join_timeout{30000};        // new ranks of a plan must commit-enter by then
  std::chrono::milliseconds collective_timeout{30000};  // all callers of fork/comm_spawn/merge
  std::chrono::milliseconds checkpoint_timeout{30000};
  std::chrono::milliseconds rank_connect_timeout{10000};
};

/// How the controller gets ranks started.
class Backend {
 public:
  virtual ~Backend() = default;
  /// True when ranks are launched through per-node head daemons.
  virtual bool uses_heads() const = 0;
  /// Errors: LaunchFailed.
  virtual void start_head(std::uint32_t node, const Endpoint& controller) = 0;
  /// Direct launch, used when there are no heads.
  virtual void launch(const wire::Launch& launch) = 0;
  /// Nodes whose head process has gone away since the last call.
  virtual std::vector<std::uint32_t> reap_heads() { return {}; }
  virtual void shutdown(std::chrono::milliseconds /*grace*/) {}
};

/// Starts head daemons as child processes.
class ProcessBackend : public Backend {
 public:
  ProcessBackend(std::filesystem::path head_exe, std::filesystem::path daemon_exe);
  bool uses_heads() const override { return true; }
  void start_head(std::uint32_t node, const Endpoint& controller) override;
  void launch(const wire::Launch& launch) override;
  std::vector<std::uint32_t> reap_heads() override;
  void shutdown(std::chrono::milliseconds grace) override;

 private:
  std::filesystem::path head_exe_;
  std::filesystem::path daemon_exe_;
  std::map<std::uint32_t, pid_t> heads_;
};

/// One job's controller: owns the world history, plans and commits membership
/// changes, serves barriers, and answers operator requests.
class Controller {
 public:
  /// Binds the control listener and publishes <run>/<jobid>.ctl.
  /// Errors: ManifestInvalid and ShrinkUnsupported for restarts.
  Controller(ControllerConfig cfg, Backend& backend);
  ~Controller();
  Controller(const Controller&) = delete;
  Controller& operator=(const Controller&) = delete;

  const Endpoint& endpoint() const;
  /// Runs the job to completion and returns its exit code.
  int run();

  /// Thread-safe: reports that a directly launched rank has exited.
  void post_rank_exit(Rank rank, std::uint32_t launch_id, int code);
  /// Thread-safe: ends run() with exit code 1 at the next loop turn.
  void request_stop();

  struct State;

 private:
  std::unique_ptr<State> s_;
};

}  // namespace elastic
