#pragma once

#include <bit>
#include <cstdint>
#include <random>
#include <vector>

#include "elastic/bytes.hpp"
#include "elastic/world.hpp"

namespace elastic::demo {

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const Range&) const = default;
};

/// Contiguous block decomposition of a 1-D grid over ranks 0..parts-1.
struct GridPartition {
  std::size_t global_n = 0;
  std::vector<Range> owned;  // indexed by rank

  /// Sizes differ by at most one; lower ranks take the extra points.
  static GridPartition block(std::size_t global_n, std::uint32_t parts);

  std::uint32_t parts() const { return static_cast<std::uint32_t>(owned.size()); }
  /// Errors: PartitionMismatch unless the ranges tile 0..global_n-1 in rank order.
  void validate() const;
  Rank owner(std::size_t index) const;
  bool operator==(const GridPartition&) const = default;
};

/// One contiguous run of points moving from one rank to another.
struct Transfer {
  Rank from = 0;
  Rank to = 0;
  Range range;
  bool operator==(const Transfer&) const = default;
};

/// Cross-rank moves that take data laid out by `from` to the layout of `to`, in
/// index order. Points a rank keeps are not listed. Errors: PartitionMismatch.
std::vector<Transfer> repartition_plan(const GridPartition& from, const GridPartition& to);

/// Points `rank` owns under both layouts; empty when it is missing from either.
Range kept(const GridPartition& from, const GridPartition& to, Rank rank);

/// Applies a plan to per-rank data held in one process.
template <class T>
std::vector<std::vector<T>> repartition_local(const std::vector<std::vector<T>>& data, const GridPartition& from,
                                              const GridPartition& to) {
  auto plan = repartition_plan(from, to);
  std::vector<std::vector<T>> out(to.parts());
  for (Rank r = 0; r < to.parts(); ++r) {
    out[r].resize(to.owned[r].size());
    plan.push_back({r, r, kept(from, to, r)});
  }
  for (const auto& t : plan) {
    for (std::size_t i = t.range.begin; i < t.range.end; ++i) {
      out[t.to][i - to.owned[t.to].begin] = data[t.from][i - from.owned[t.from].begin];
    }
  }
  return out;
}

// ---- relaxation --------------------------------------------------------------

/// u'_i = (u_{i-1} + u_{i+1}) / 2; the integer variant rounds toward negative infinity.
inline double relax_point(double left, double right) { return (left + right) / 2; }
inline std::int64_t relax_point(std::int64_t left, std::int64_t right) { return (left + right) >> 1; }

/// One Jacobi sweep over the whole grid; the two end points stay fixed.
template <class T>
std::vector<T> sweep(const std::vector<T>& u) {
  std::vector<T> next = u;
  for (std::size_t i = 1; i + 1 < u.size(); ++i) next[i] = relax_point(u[i - 1], u[i + 1]);
  return next;
}

/// Single-process reference: `iters` sweeps in index order.
template <class T>
std::vector<T> relax_sequential(std::vector<T> u, int iters) {
  for (int k = 0; k < iters; ++k) u = sweep(u);
  return u;
}

/// Seed 0 gives the clamped membrane 0,...,0,1 (scaled to 1'000'000 for integers);
/// other seeds give uniformly random values.
template <class T>
std::vector<T> initial_grid(std::size_t n, std::uint64_t seed) {
  std::vector<T> u(n, T{});
  if (seed == 0) {
    if (n > 0) u[n - 1] = static_cast<T>(std::is_integral_v<T> ? 1'000'000 : 1);
    return u;
  }
  std::mt19937_64 rng(seed);
  for (auto& v : u) {
    std::uint64_t x = rng();
    if constexpr (std::is_integral_v<T>) {
      v = static_cast<T>(x % 1'000'001);
    } else {
      v = static_cast<T>(x >> 11) * 0x1.0p-53;
    }
  }
  return u;
}

/// Value at fine point j of `fine_n` points spanning the same interval as `coarse`.
double interpolate(const std::vector<double>& coarse, std::size_t fine_n, std::size_t j);
std::vector<double> interpolate_all(const std::vector<double>& coarse, std::size_t fine_n);

// ---- value encoding -------------------------------------------------------------

template <class T>
void put_values(ByteWriter& w, const std::vector<T>& values) {
  w.u64(values.size());
  for (T v : values) w.u64(std::bit_cast<std::uint64_t>(v));
}

template <class T>
std::vector<T> get_values(ByteReader& r) {
  std::vector<T> out(r.u64());
  for (auto& v : out) v = std::bit_cast<T>(r.u64());
  return out;
}

}  // namespace elastic::demo
