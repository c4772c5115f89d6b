#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>

#include "locagg/rng.h"

// Laplace mechanism, per-query sensitivities and the signed encoding that
// places negative values in the Paillier message space.
namespace locagg::dp {

inline constexpr double kEpsilonLn2 = 0.69314718055994530942;

class NoiseSpec {
 public:
  // Throws std::invalid_argument unless epsilon > 0 and sensitivity > 0.
  NoiseSpec(double epsilon, double sensitivity);

  double epsilon() const { return epsilon_; }
  double sensitivity() const { return sensitivity_; }
  double scale() const { return sensitivity_ / epsilon_; }

 private:
  double epsilon_;
  double sensitivity_;
};

// Inverse-CDF transform of a uniform u in (-1/2, 1/2):
// -scale * sign(u) * ln(1 - 2|u|).
double LaplaceFromUniform(double scale, double u);

// One continuous Laplace(scale) draw; consumes exactly one uniform.
double LaplaceContinuous(const NoiseSpec& spec, Rng& rng);

// LaplaceContinuous rounded to the nearest integer.
std::int64_t LaplaceSample(const NoiseSpec& spec, Rng& rng);

enum class SensitivityQuery { kRnnq, kAvgqCount, kAvgqTotal, kMaxqBucket };

// RNNQ: 2, AVGQ count: 1, AVGQ total: max distance, MAXQ bucket: 1.
// max_distance is required exactly for kAvgqTotal.
std::int64_t SensitivityFor(SensitivityQuery query,
                            std::optional<std::int64_t> max_distance = std::nullopt);

class SignedRangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Bijection between (-m/2, m/2] and [0, m).
BigInt EncodeSigned(const BigInt& v, const BigInt& m);
BigInt DecodeSigned(const BigInt& raw, const BigInt& m);

}  // namespace locagg::dp
