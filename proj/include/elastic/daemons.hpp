#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "elastic/world.hpp"

namespace elastic {

/// Per-node daemon: registers with the controller, then starts one fault daemon
/// per LAUNCH it receives. Exits after FINALIZE once its fault daemons are gone,
/// or kills them if the controller link drops.
int run_head(const Endpoint& controller, std::uint32_t node, const std::filesystem::path& daemon_exe);

/// Per-rank daemon: registers with the controller before starting the rank,
/// reports the rank's exit code, and kills the rank if the controller link drops.
int run_fault(const Endpoint& controller, Rank rank, const std::vector<std::string>& command);

}  // namespace elastic
