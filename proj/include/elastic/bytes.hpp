#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elastic/error.hpp"

namespace elastic {

using Bytes = std::vector<std::byte>;

Bytes to_bytes(std::string_view s);
std::string to_string(std::span<const std::byte> b);
std::string to_hex(std::span<const std::byte> b);
Bytes from_hex(std::string_view hex);

/// Little-endian fixed-width encoder. Strings and blobs are u32-length-prefixed.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void raw(std::span<const std::byte> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void blob(std::span<const std::byte> b);
  void str(std::string_view s);
  void u32_list(std::span<const std::uint32_t> v);

  const Bytes& bytes() const& { return out_; }
  Bytes take() && { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  void put_le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
  Bytes out_;
};

/// Bounds-checked decoder; any short read throws `truncation_code`.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> in, Errc truncation_code = Errc::malformed_frame)
      : in_(in), truncation_(truncation_code) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get_le(4))); }
  std::uint64_t u64() { return get_le(8); }
  std::span<const std::byte> raw(std::size_t n);
  Bytes blob();
  std::string str();
  std::vector<std::uint32_t> u32_list();

  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }
  /// Throws unless every byte was consumed.
  void expect_done() const;

 private:
  std::uint64_t get_le(int width);
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
  Errc truncation_;
};

}  // namespace elastic
