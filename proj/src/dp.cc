#include "locagg/dp.h"

#include <cmath>

namespace locagg::dp {

NoiseSpec::NoiseSpec(double epsilon, double sensitivity)
    : epsilon_(epsilon), sensitivity_(sensitivity) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("epsilon must be positive and finite");
  }
  if (!(sensitivity > 0.0)) throw std::invalid_argument("sensitivity must be positive");
}

double LaplaceFromUniform(double scale, double u) {
  if (u == 0.0) return 0.0;
  const double sign = u < 0.0 ? -1.0 : 1.0;
  return -scale * sign * std::log1p(-2.0 * std::fabs(u));
}

double LaplaceContinuous(const NoiseSpec& spec, Rng& rng) {
  double u;
  do {
    u = rng.UniformUnit() - 0.5;
  } while (u == -0.5);
  return LaplaceFromUniform(spec.scale(), u);
}

std::int64_t LaplaceSample(const NoiseSpec& spec, Rng& rng) {
  return std::llround(LaplaceContinuous(spec, rng));
}

std::int64_t SensitivityFor(SensitivityQuery query, std::optional<std::int64_t> max_distance) {
  if (query == SensitivityQuery::kAvgqTotal) {
    if (!max_distance) throw std::invalid_argument("AVGQ total sensitivity needs max distance");
    if (*max_distance < 0) throw std::invalid_argument("max distance must be non-negative");
    return *max_distance;
  }
  if (max_distance) throw std::invalid_argument("max distance only applies to AVGQ total");
  switch (query) {
    case SensitivityQuery::kRnnq:
      return 2;
    case SensitivityQuery::kAvgqCount:
    case SensitivityQuery::kMaxqBucket:
      return 1;
    case SensitivityQuery::kAvgqTotal:
      break;
  }
  throw std::logic_error("unreachable");
}

BigInt EncodeSigned(const BigInt& v, const BigInt& m) {
  // v must lie in (-m/2, m/2].
  const BigInt twice = 2 * v;
  if (twice <= -m || twice > m) throw SignedRangeError("signed value magnitude too large");
  BigInt out = v % m;
  if (sgn(out) < 0) out += m;
  return out;
}

BigInt DecodeSigned(const BigInt& raw, const BigInt& m) {
  if (sgn(raw) < 0 || raw >= m) throw SignedRangeError("raw plaintext outside [0, m)");
  if (2 * raw <= m) return raw;
  return raw - m;
}

}  // namespace locagg::dp
