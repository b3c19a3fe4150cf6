#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "elastic/runtime.hpp"
#include "grid.hpp"

namespace elastic::demo {

namespace tags {
inline constexpr std::int32_t halo = 1;
inline constexpr std::int32_t repartition = 2;
inline constexpr std::int32_t gather = 3;
inline constexpr std::int32_t iteration = 4;
inline constexpr std::int32_t traffic = 5;
inline constexpr std::int32_t clone_check = 6;
}  // namespace tags

/// Test hook: rank 0 announces `reached-<it>` and waits for `go-<it>` before
/// entering the barrier of iteration `it`.
struct HoldPoints {
  std::set<int> at;
  std::filesystem::path dir;

  void maybe_wait(Rank rank, int it) const {
    if (rank != 0 || !at.contains(it) || dir.empty()) return;
    std::ofstream(dir / ("reached-" + std::to_string(it))).put('\n');
    while (!std::filesystem::exists(dir / ("go-" + std::to_string(it)))) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
};

inline bool resized(Status s) { return s == Status::world_resized; }

/// Owned segment of a distributed 1-D grid plus the bookkeeping every demo needs.
template <class T>
struct Segment {
  GridPartition part;
  std::vector<T> values;  // values of part.owned[rank]

  /// Halo exchange plus one sweep. Returns the number of WORLD_RESIZED notices seen.
  int relax(Runtime& rt) {
    int notices = 0;
    Rank me = rt.rank();
    const Range own = part.owned[me];
    if (own.size() == 0) return 0;
    const bool has_left = own.begin > 0, has_right = own.end < part.global_n;
    auto one = [](T v) {
      ByteWriter w;
      w.u64(std::bit_cast<std::uint64_t>(v));
      return std::move(w).take();
    };
    if (has_left) notices += resized(rt.send(me - 1, tags::halo, one(values.front())));
    if (has_right) notices += resized(rt.send(me + 1, tags::halo, one(values.back())));
    T left{}, right{};
    auto take = [&](Rank src) {
      auto got = rt.recv(src, tags::halo);
      notices += resized(got.status);
      ByteReader r(got.payload);
      return std::bit_cast<T>(r.u64());
    };
    if (has_left) left = take(me - 1);
    if (has_right) right = take(me + 1);

    std::vector<T> next = values;
    for (std::size_t k = 0; k < values.size(); ++k) {
      std::size_t g = own.begin + k;
      if (g == 0 || g + 1 == part.global_n) continue;
      T l = k == 0 ? left : values[k - 1];
      T r = k + 1 == values.size() ? right : values[k + 1];
      next[k] = relax_point(l, r);
    }
    values = std::move(next);
    return notices;
  }

  /// Moves data from the current layout to `to`. Ranks outside the current
  /// layout only receive. Each chunk carries `done` so late joiners learn the
  /// iteration count. Ends with a WORLD barrier.
  int repartition(Runtime& rt, const GridPartition& to, std::uint64_t& done) {
    int notices = 0;
    Rank me = rt.rank();
    auto plan = repartition_plan(part, to);
    std::vector<T> out(to.owned[me].size());
    for (const auto& t : plan) {
      if (t.from != me) continue;
      ByteWriter w;
      w.u64(done);
      w.u64(t.range.begin);
      std::vector<T> chunk(values.begin() + static_cast<std::ptrdiff_t>(t.range.begin - part.owned[me].begin),
                           values.begin() + static_cast<std::ptrdiff_t>(t.range.end - part.owned[me].begin));
      put_values(w, chunk);
      notices += resized(rt.send(t.to, tags::repartition, w.bytes()));
    }
    const Range keep = kept(part, to, me);
    for (std::size_t i = keep.begin; i < keep.end; ++i) out[i - to.owned[me].begin] = values[i - part.owned[me].begin];
    for (const auto& t : plan) {
      if (t.to != me) continue;
      auto got = rt.recv(t.from, tags::repartition);
      notices += resized(got.status);
      ByteReader r(got.payload);
      done = r.u64();
      std::size_t begin = r.u64();
      auto chunk = get_values<T>(r);
      for (std::size_t i = 0; i < chunk.size(); ++i) out[begin + i - to.owned[me].begin] = chunk[i];
    }
    part = to;
    values = std::move(out);
    notices += resized(rt.barrier());
    return notices;
  }

  /// Rank 0 returns the whole grid; other ranks return an empty vector.
  std::vector<T> gather(Runtime& rt) {
    Rank me = rt.rank();
    if (me != 0) {
      ByteWriter w;
      put_values(w, values);
      rt.send(0, tags::gather, w.bytes());
      return {};
    }
    std::vector<T> all(part.global_n);
    std::copy(values.begin(), values.end(), all.begin() + static_cast<std::ptrdiff_t>(part.owned[0].begin));
    for (Rank r = 1; r < part.parts(); ++r) {
      auto got = rt.recv(r, tags::gather);
      ByteReader rd(got.payload);
      auto chunk = get_values<T>(rd);
      std::copy(chunk.begin(), chunk.end(), all.begin() + static_cast<std::ptrdiff_t>(part.owned[r].begin));
    }
    return all;
  }

  Bytes serialize(std::uint64_t done) const {
    ByteWriter w;
    w.u64(done);
    w.u64(part.global_n);
    w.u32(part.parts());
    put_values(w, values);
    return std::move(w).take();
  }

  /// Returns the iteration count stored by serialize().
  std::uint64_t deserialize(std::span<const std::byte> blob) {
    ByteReader r(blob, Errc::truncated_image);
    std::uint64_t done = r.u64();
    std::size_t n = r.u64();
    part = GridPartition::block(n, r.u32());
    values = get_values<T>(r);
    return done;
  }
};

template <class T>
void write_values(const std::filesystem::path& path, const std::vector<T>& values) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(Errc::io_error, "cannot write " + path.string());
  for (T v : values) {
    if constexpr (std::is_integral_v<T>) {
      std::fprintf(f, "%lld\n", static_cast<long long>(v));
    } else {
      std::fprintf(f, "%.17g\n", v);
    }
  }
  std::fclose(f);
}

/// Parses "1,5,7" into a set.
std::set<int> parse_int_list(const std::string& text);

/// Writes `<dir>/rank<r>.txt` when `dir` is non-empty.
void write_report(const std::filesystem::path& dir, Rank rank, const std::string& body);

}  // namespace elastic::demo
