#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

#include <gmpxx.h>

namespace locagg {

using BigInt = mpz_class;

// Seedable ChaCha20 keystream. Every party and session owns its own instance;
// the same seed always reproduces the same stream.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);
  explicit Rng(const std::array<std::uint8_t, 32>& key);

  // Seeds from the operating system entropy pool.
  static Rng FromEntropy();

  void Fill(std::span<std::uint8_t> out);
  std::uint64_t NextU64();

  // Uniform in [0, bound). bound must be positive.
  std::uint64_t UniformU64(std::uint64_t bound);
  // Uniform in [lo, hi], inclusive.
  std::int64_t UniformInt(std::int64_t lo, std::int64_t hi);
  // Uniform in [0, 1) with 53 bits of precision.
  double UniformUnit();
  // Uniform in [0, bound).
  BigInt UniformBelow(const BigInt& bound);
  BigInt RandomBits(std::size_t bits);

  // Independent child stream derived from this one.
  Rng Fork();

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() { return NextU64(); }

 private:
  void Refill();

  std::array<std::uint8_t, 32> key_{};
  std::uint64_t block_counter_ = 0;
  std::array<std::uint8_t, 512> buffer_{};
  std::size_t pos_ = buffer_.size();
};

}  // namespace locagg
