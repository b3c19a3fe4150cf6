#pragma once

#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

namespace elastic::cli {

/// Splits argv at the first "--": options before it, the program command after it.
inline std::pair<std::vector<std::string>, std::vector<std::string>> split_command(int argc, char** argv) {
  std::vector<std::string> opts, cmd;
  bool after = false;
  for (int i = 0; i < argc; ++i) {
    std::string a = argv[i];
    if (!after && a == "--" && i > 0) {
      after = true;
      continue;
    }
    (after ? cmd : opts).push_back(std::move(a));
  }
  return {opts, cmd};
}

/// Log level from ELASTIC_LOG (trace, debug, info, warn, error); warnings by default.
inline void init_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("ELASTIC_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
  spdlog::set_pattern("[%H:%M:%S.%e] [%l] [pid %P] %v");
}

}  // namespace elastic::cli
