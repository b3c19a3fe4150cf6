#include "elastic/bytes.hpp"

#include <cstring>
#include <limits>

namespace elastic {

Bytes to_bytes(std::string_view s) {
  Bytes out(s.size());
  if (!s.empty()) std::memcpy(out.data(), s.data(), s.size());
  return out;
}

std::string to_string(std::span<const std::byte> b) {
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

std::string to_hex(std::span<const std::byte> b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (std::byte x : b) {
    auto v = std::to_integer<unsigned>(x);
    out.push_back(kDigits[v >> 4]);
    out.push_back(kDigits[v & 0xF]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(Errc::malformed_frame, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = nibble(hex[2 * i]);
    int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::malformed_frame, "invalid hex digit");
    out[i] = static_cast<std::byte>((hi << 4) | lo);
  }
  return out;
}

void ByteWriter::blob(std::span<const std::byte> b) {
  if (b.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::oversize, "blob exceeds u32 length prefix");
  }
  u32(static_cast<std::uint32_t>(b.size()));
  raw(b);
}

void ByteWriter::str(std::string_view s) {
  blob(std::span(reinterpret_cast<const std::byte*>(s.data()), s.size()));
}

void ByteWriter::u32_list(std::span<const std::uint32_t> v) {
  u32(static_cast<std::uint32_t>(v.size()));
  for (auto x : v) u32(x);
}

std::span<const std::byte> ByteReader::raw(std::size_t n) {
  if (remaining() < n) {
    throw Error(truncation_, "need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()));
  }
  auto out = in_.subspan(pos_, n);
  pos_ += n;
  return out;
}

Bytes ByteReader::blob() {
  auto n = u32();
  auto s = raw(n);
  return Bytes(s.begin(), s.end());
}

std::string ByteReader::str() {
  auto n = u32();
  return to_string(raw(n));
}

std::vector<std::uint32_t> ByteReader::u32_list() {
  auto n = u32();
  if (remaining() / 4 < n) throw Error(truncation_, "u32 list longer than input");
  std::vector<std::uint32_t> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(u32());
  return out;
}

void ByteReader::expect_done() const {
  if (!done()) throw Error(truncation_, std::to_string(remaining()) + " trailing bytes");
}

std::uint64_t ByteReader::get_le(int width) {
  auto s = raw(static_cast<std::size_t>(width));
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{std::to_integer<std::uint8_t>(s[i])} << (8 * i);
  return v;
}

}  // namespace elastic
