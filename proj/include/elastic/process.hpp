#pragma once

#include <sys/types.h>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace elastic::proc {

using EnvPairs = std::vector<std::pair<std::string, std::string>>;

struct SpawnOptions {
  EnvPairs env;             // added to (or replacing entries of) the current environment
  bool new_group = false;   // child leads its own process group
  std::optional<std::filesystem::path> stdout_path;  // append child stdout here
};

/// Starts argv[0] (PATH lookup when it has no slash). Errors: LaunchFailed.
pid_t spawn(const std::vector<std::string>& argv, const SpawnOptions& opts = {});

/// Exit code of a reaped child: WEXITSTATUS, or 128 + signal number.
int decode_status(int status);
/// Non-blocking reap; nullopt while the child is running.
std::optional<int> try_wait(pid_t pid);
int wait(pid_t pid);
/// Waits up to `timeout`, then SIGKILLs the child (or its group) and reaps it.
int wait_or_kill(pid_t pid, std::chrono::milliseconds timeout, bool group = false);

/// Path of the running executable.
std::filesystem::path self_exe();
/// `name` located next to the running executable.
std::filesystem::path sibling(const std::string& name);

}  // namespace elastic::proc
