#include "grid.hpp"

#include <algorithm>
#include <string>

namespace elastic::demo {

GridPartition GridPartition::block(std::size_t global_n, std::uint32_t parts) {
  if (parts == 0) throw Error(Errc::partition_mismatch, "partition into zero parts");
  GridPartition p;
  p.global_n = global_n;
  std::size_t base = global_n / parts, extra = global_n % parts, at = 0;
  for (std::uint32_t r = 0; r < parts; ++r) {
    std::size_t len = base + (r < extra ? 1 : 0);
    p.owned.push_back({at, at + len});
    at += len;
  }
  return p;
}

void GridPartition::validate() const {
  std::size_t at = 0;
  for (std::size_t r = 0; r < owned.size(); ++r) {
    if (owned[r].begin != at || owned[r].end < owned[r].begin) {
      throw Error(Errc::partition_mismatch, "rank " + std::to_string(r) + " range [" +
                                                std::to_string(owned[r].begin) + "," + std::to_string(owned[r].end) +
                                                ") does not continue at " + std::to_string(at));
    }
    at = owned[r].end;
  }
  if (at != global_n) {
    throw Error(Errc::partition_mismatch, "ranges cover " + std::to_string(at) + " of " +
                                              std::to_string(global_n) + " points");
  }
}

Rank GridPartition::owner(std::size_t index) const {
  auto it = std::upper_bound(owned.begin(), owned.end(), index,
                             [](std::size_t i, const Range& r) { return i < r.end; });
  if (it == owned.end() || !it->contains(index)) {
    throw Error(Errc::partition_mismatch, "no owner for point " + std::to_string(index));
  }
  return static_cast<Rank>(it - owned.begin());
}

std::vector<Transfer> repartition_plan(const GridPartition& from, const GridPartition& to) {
  from.validate();
  to.validate();
  if (from.global_n != to.global_n) {
    throw Error(Errc::partition_mismatch, "grids of " + std::to_string(from.global_n) + " and " +
                                              std::to_string(to.global_n) + " points");
  }
  std::vector<Transfer> out;
  std::size_t i = 0;
  Rank a = 0, b = 0;
  while (i < from.global_n) {
    while (from.owned[a].end <= i) ++a;
    while (to.owned[b].end <= i) ++b;
    std::size_t end = std::min(from.owned[a].end, to.owned[b].end);
    if (a != b) out.push_back({a, b, {i, end}});
    i = end;
  }
  return out;
}

Range kept(const GridPartition& from, const GridPartition& to, Rank rank) {
  if (rank >= from.parts() || rank >= to.parts()) return {};
  std::size_t b = std::max(from.owned[rank].begin, to.owned[rank].begin);
  std::size_t e = std::min(from.owned[rank].end, to.owned[rank].end);
  return b < e ? Range{b, e} : Range{};
}

double interpolate(const std::vector<double>& coarse, std::size_t fine_n, std::size_t j) {
  if (coarse.size() < 2 || fine_n < 2) return coarse.empty() ? 0.0 : coarse.front();
  // Position in coarse index space as an exact fraction num/den.
  std::size_t num = j * (coarse.size() - 1), den = fine_n - 1;
  std::size_t i0 = num / den;
  if (i0 + 1 >= coarse.size()) return coarse.back();
  double t = static_cast<double>(num % den) / static_cast<double>(den);
  return coarse[i0] + (coarse[i0 + 1] - coarse[i0]) * t;
}

std::vector<double> interpolate_all(const std::vector<double>& coarse, std::size_t fine_n) {
  std::vector<double> out(fine_n);
  for (std::size_t j = 0; j < fine_n; ++j) out[j] = interpolate(coarse, fine_n, j);
  return out;
}

}  // namespace elastic::demo
