#include "locagg/bytes.h"

#include <bit>
#include <cstring>

namespace locagg {

Bytes ToBigEndian(const BigInt& value) {
  if (sgn(value) < 0) throw std::invalid_argument("ToBigEndian: negative value");
  if (sgn(value) == 0) return {};
  Bytes out((mpz_sizeinbase(value.get_mpz_t(), 2) + 7) / 8);
  std::size_t written = 0;
  mpz_export(out.data(), &written, 1, 1, 1, 0, value.get_mpz_t());
  out.resize(written);
  return out;
}

BigInt FromBigEndian(std::span<const std::uint8_t> bytes) {
  BigInt out;
  if (!bytes.empty()) mpz_import(out.get_mpz_t(), bytes.size(), 1, 1, 1, 0, bytes.data());
  return out;
}

void ByteWriter::U32(std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
}

void ByteWriter::U64(std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
}

void ByteWriter::F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::Raw(std::span<const std::uint8_t> bytes) {
  out_.insert(out_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::Big(const BigInt& v) {
  const Bytes mag = ToBigEndian(v);
  U32(static_cast<std::uint32_t>(mag.size()));
  Raw(mag);
}

void ByteWriter::String(std::string_view s) {
  U32(static_cast<std::uint32_t>(s.size()));
  out_.insert(out_.end(), s.begin(), s.end());
}

std::span<const std::uint8_t> ByteReader::Raw(std::size_t n) {
  if (n > remaining()) throw DecodeError("truncated input");
  auto out = in_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::U8() { return Raw(1)[0]; }

std::uint32_t ByteReader::U32() {
  auto b = Raw(4);
  std::uint32_t v = 0;
  for (auto byte : b) v = (v << 8) | byte;
  return v;
}

std::uint64_t ByteReader::U64() {
  auto b = Raw(8);
  std::uint64_t v = 0;
  for (auto byte : b) v = (v << 8) | byte;
  return v;
}

double ByteReader::F64() { return std::bit_cast<double>(U64()); }

BigInt ByteReader::Big() {
  const std::uint32_t len = U32();
  auto mag = Raw(len);
  if (!mag.empty() && mag[0] == 0) throw DecodeError("non-minimal integer encoding");
  return FromBigEndian(mag);
}

std::string ByteReader::String() {
  const std::uint32_t len = U32();
  auto b = Raw(len);
  return std::string(b.begin(), b.end());
}

void ByteReader::ExpectEnd() const {
  if (remaining() != 0) throw DecodeError("trailing bytes after payload");
}

}  // namespace locagg
