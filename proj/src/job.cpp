#include "elastic/job.hpp"

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "elastic/checkpoint.hpp"
#include "elastic/net.hpp"

namespace elastic::job {

fs::path ctl_path(const fs::path& run_dir, const std::string& jobid) { return run_dir / (jobid + ".ctl"); }
fs::path trace_path(const fs::path& run_dir, const std::string& jobid) { return run_dir / (jobid + ".trace"); }
fs::path final_path(const fs::path& run_dir, const std::string& jobid) { return run_dir / (jobid + ".final"); }
fs::path job_dir(const fs::path& run_dir, const std::string& jobid) { return run_dir / jobid; }

fs::path config_path(const fs::path& run_dir, const std::string& jobid, Rank rank) {
  return job_dir(run_dir, jobid) / ("rank" + std::to_string(rank) + ".conf");
}

bool valid_jobid(const std::string& jobid) {
  return !jobid.empty() && std::all_of(jobid.begin(), jobid.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '.' || c == '_' || c == '-';
  });
}

std::string make_jobid() {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  return "job" + std::to_string(::getpid()) + "-" + std::to_string(ms % 100000000);
}

void write_ctl(const fs::path& run_dir, const std::string& jobid, const Endpoint& ep) {
  fs::create_directories(run_dir);
  auto text = ep.str() + "\n";
  ckpt::write_file_atomic(ctl_path(run_dir, jobid), std::as_bytes(std::span(text)));
}

Endpoint read_ctl(const fs::path& run_dir, const std::string& jobid) {
  std::ifstream in(ctl_path(run_dir, jobid));
  std::string line;
  if (!in || !std::getline(in, line)) {
    throw Error(Errc::job_not_found, "no control file for job '" + jobid + "' in " + run_dir.string());
  }
  try {
    return Endpoint::parse(line);
  } catch (const std::exception&) {
    throw Error(Errc::job_not_found, "unreadable control file for job '" + jobid + "'");
  }
}

std::string format_config(const WorldView& view) {
  std::ostringstream os;
  for (Rank r = 0; r < view.size; ++r) {
    const auto& ep = view.endpoints.at(r);
    os << r << ' ' << ep.host << ' ' << ep.port << ' ' << view.version.str() << '\n';
  }
  return os.str();
}

void write_configs(const fs::path& run_dir, const std::string& jobid, const WorldView& view) {
  auto dir = job_dir(run_dir, jobid);
  fs::create_directories(dir);
  auto text = format_config(view);
  for (Rank r = 0; r < view.size; ++r) {
    ckpt::write_file_atomic(config_path(run_dir, jobid, r), std::as_bytes(std::span(text)));
  }
}

wire::Message request(const Endpoint& controller, const wire::Message& msg, std::chrono::milliseconds timeout) {
  auto link = net::connect(controller, std::min(timeout, std::chrono::milliseconds(2000)));
  link.send(msg);
  auto reply = link.recv_for(timeout);
  if (!reply) throw Error(Errc::connect_timeout, "controller did not answer within " +
                                                      std::to_string(timeout.count()) + " ms");
  return std::move(*reply);
}

}  // namespace elastic::job
