#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "locagg/rng.h"

namespace locagg {

using Bytes = std::vector<std::uint8_t>;

// Thrown by ByteReader on short or inconsistent input.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Minimal-length big-endian magnitude; zero encodes as an empty array.
Bytes ToBigEndian(const BigInt& value);
BigInt FromBigEndian(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void U8(std::uint8_t v) { out_.push_back(v); }
  void U32(std::uint32_t v);
  void U64(std::uint64_t v);
  void I32(std::int32_t v) { U32(static_cast<std::uint32_t>(v)); }
  void I64(std::int64_t v) { U64(static_cast<std::uint64_t>(v)); }
  void F64(double v);
  void Raw(std::span<const std::uint8_t> bytes);
  // 4-byte big-endian length, then the minimal big-endian magnitude.
  void Big(const BigInt& v);
  void String(std::string_view s);

  const Bytes& bytes() const& { return out_; }
  Bytes&& Take() && { return std::move(out_); }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t U8();
  std::uint32_t U32();
  std::uint64_t U64();
  std::int32_t I32() { return static_cast<std::int32_t>(U32()); }
  std::int64_t I64() { return static_cast<std::int64_t>(U64()); }
  double F64();
  std::span<const std::uint8_t> Raw(std::size_t n);
  BigInt Big();
  std::string String();

  std::size_t remaining() const { return in_.size() - pos_; }
  void ExpectEnd() const;

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace locagg
