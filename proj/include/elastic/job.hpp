#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include "elastic/wire.hpp"

// On-disk layout of a job under its run directory:
//   <run>/<jobid>.ctl            controller endpoint "host:port"
//   <run>/<jobid>.trace          controller event log, one event per line
//   <run>/<jobid>.final          last status report and exit code
//   <run>/<jobid>/rank<r>.conf   per-rank config, one "rank host port epoch" line per rank
namespace elastic::job {

namespace fs = std::filesystem;

fs::path ctl_path(const fs::path& run_dir, const std::string& jobid);
fs::path trace_path(const fs::path& run_dir, const std::string& jobid);
fs::path final_path(const fs::path& run_dir, const std::string& jobid);
fs::path job_dir(const fs::path& run_dir, const std::string& jobid);
fs::path config_path(const fs::path& run_dir, const std::string& jobid, Rank rank);

/// Letters, digits, '.', '_' and '-' only.
bool valid_jobid(const std::string& jobid);
std::string make_jobid();

void write_ctl(const fs::path& run_dir, const std::string& jobid, const Endpoint& ep);
/// Errors: JobNotFound.
Endpoint read_ctl(const fs::path& run_dir, const std::string& jobid);

std::string format_config(const WorldView& view);
void write_configs(const fs::path& run_dir, const std::string& jobid, const WorldView& view);

/// Sends one message on a fresh connection and waits for the response.
wire::Message request(const Endpoint& controller, const wire::Message& msg,
                      std::chrono::milliseconds timeout);

}  // namespace elastic::job
