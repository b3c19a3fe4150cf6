#include "demo_common.hpp"

#include <sstream>

namespace elastic::demo {

std::set<int> parse_int_list(const std::string& text) {
  std::set<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

void write_report(const std::filesystem::path& dir, Rank rank, const std::string& body) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  auto path = dir / ("rank" + std::to_string(rank) + ".txt");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << body;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace elastic::demo
