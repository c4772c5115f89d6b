#include "locagg/rng.h"

#include <sodium.h>

#include <cstring>
#include <stdexcept>
#include <vector>

namespace locagg {
namespace {

void EnsureSodium() {
  static const int status = sodium_init();
  if (status < 0) throw std::runtime_error("libsodium initialisation failed");
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  EnsureSodium();
  std::array<std::uint8_t, 8> seed_bytes{};
  for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<std::uint8_t>(seed >> (8 * i));
  crypto_generichash(key_.data(), key_.size(), seed_bytes.data(), seed_bytes.size(),
                     nullptr, 0);
}

Rng::Rng(const std::array<std::uint8_t, 32>& key) : key_(key) { EnsureSodium(); }

Rng Rng::FromEntropy() {
  EnsureSodium();
  std::array<std::uint8_t, 32> key{};
  randombytes_buf(key.data(), key.size());
  return Rng(key);
}

void Rng::Refill() {
  static const std::array<std::uint8_t, 512> kZeros{};
  static const std::array<std::uint8_t, crypto_stream_chacha20_NONCEBYTES> kNonce{};
  crypto_stream_chacha20_xor_ic(buffer_.data(), kZeros.data(), buffer_.size(),
                                kNonce.data(), block_counter_, key_.data());
  block_counter_ += buffer_.size() / 64;
  pos_ = 0;
}

void Rng::Fill(std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (pos_ == buffer_.size()) Refill();
    const std::size_t take = std::min(out.size() - done, buffer_.size() - pos_);
    std::memcpy(out.data() + done, buffer_.data() + pos_, take);
    pos_ += take;
    done += take;
  }
}

std::uint64_t Rng::NextU64() {
  std::array<std::uint8_t, 8> b{};
  Fill(b);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t Rng::UniformU64(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("UniformU64: bound must be positive");
  // Rejection sampling over the largest multiple of bound.
  const std::uint64_t limit = max() - (max() % bound + 1) % bound;
  while (true) {
    const std::uint64_t v = NextU64();
    if (v <= limit) return v % bound;
  }
}

std::int64_t Rng::UniformInt(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("UniformInt: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo);
  if (span == max()) return static_cast<std::int64_t>(NextU64());
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(lo) + UniformU64(span + 1));
}

double Rng::UniformUnit() {
  return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
}

BigInt Rng::RandomBits(std::size_t bits) {
  if (bits == 0) return 0;
  std::vector<std::uint8_t> bytes((bits + 7) / 8);
  Fill(bytes);
  const std::size_t excess = bytes.size() * 8 - bits;
  bytes[0] &= static_cast<std::uint8_t>(0xFFu >> excess);
  BigInt out;
  mpz_import(out.get_mpz_t(), bytes.size(), 1, 1, 1, 0, bytes.data());
  return out;
}

BigInt Rng::UniformBelow(const BigInt& bound) {
  if (sgn(bound) <= 0) throw std::invalid_argument("UniformBelow: bound must be positive");
  const std::size_t bits = mpz_sizeinbase(bound.get_mpz_t(), 2);
  while (true) {
    BigInt v = RandomBits(bits);
    if (v < bound) return v;
  }
}

Rng Rng::Fork() {
  std::array<std::uint8_t, 32> child{};
  Fill(child);
  return Rng(child);
}

}  // namespace locagg
