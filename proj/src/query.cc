#include "locagg/query.h"

#include <numeric>
#include <sstream>

namespace locagg {

std::string_view QueryKindName(QueryKind kind) {
  switch (kind) {
    case QueryKind::kRnn: return "rnn";
    case QueryKind::kAvg: return "avg";
    case QueryKind::kMax: return "max";
  }
  return "?";
}

QueryKind ParseQueryKind(std::string_view name) {
  if (name == "rnn") return QueryKind::kRnn;
  if (name == "avg") return QueryKind::kAvg;
  if (name == "max") return QueryKind::kMax;
  throw std::invalid_argument("unknown query: " + std::string(name));
}

std::string_view VariantName(Variant variant) {
  return variant == Variant::kServerBased ? "server-based" : "client-based";
}

Variant ParseVariant(std::string_view name) {
  if (name == "server-based") return Variant::kServerBased;
  if (name == "client-based") return Variant::kClientBased;
  throw std::invalid_argument("unknown variant: " + std::string(name));
}

std::string_view AbortCodeName(AbortCode code) {
  switch (code) {
    case AbortCode::kTooManyFacilities: return "too-many-facilities";
    case AbortCode::kTooFewFacilities: return "too-few-facilities";
    case AbortCode::kMissingExisting: return "missing-existing";
    case AbortCode::kVerificationFailed: return "verification-failed";
    case AbortCode::kTooFewUsers: return "too-few-users";
    case AbortCode::kStepViolation: return "step-violation";
    case AbortCode::kMalformed: return "malformed";
    case AbortCode::kCryptoError: return "crypto-error";
    case AbortCode::kNotSetUp: return "not-set-up";
    case AbortCode::kInvalidFacility: return "invalid-facility";
    case AbortCode::kWeakKey: return "weak-key";
    case AbortCode::kSessionMismatch: return "session-mismatch";
  }
  return "unknown";
}

ProtocolAbort::ProtocolAbort(Abort abort)
    : std::runtime_error(std::string(AbortCodeName(abort.code)) + ": " + abort.detail),
      abort_(std::move(abort)) {}

Rational Rational::Of(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::invalid_argument("zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return Rational{num, den};
}

std::string Rational::ToString() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

std::string QueryResult::ToString() const {
  std::ostringstream out;
  if (const auto* rnn = std::get_if<RnnResult>(&value)) {
    out << "q=(";
    for (std::size_t i = 0; i < rnn->counts.size(); ++i) {
      if (i) out << ",";
      out << rnn->counts[i];
    }
    out << ")";
  } else if (const auto* avg = std::get_if<AvgResult>(&value)) {
    out << "total=" << avg->total << " n_I=" << avg->count << " average=";
    if (avg->average) {
      out << avg->average->ToString() << " (" << avg->average->ToDouble() << ")";
    } else {
      out << "undefined";
    }
  } else {
    const auto& max = std::get<MaxResult>(value);
    out << "max=";
    if (max.distance) {
      out << *max.distance;
    } else {
      out << "no-result";
    }
    out << " w=" << max.w;
  }
  if (dp_epsilon) out << " [dp epsilon=" << *dp_epsilon << "]";
  return out.str();
}

}  // namespace locagg
