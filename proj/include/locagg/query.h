#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace locagg {

enum class QueryKind : std::uint8_t { kRnn = 1, kAvg = 2, kMax = 3 };
enum class Variant : std::uint8_t { kServerBased = 1, kClientBased = 2 };

std::string_view QueryKindName(QueryKind kind);
QueryKind ParseQueryKind(std::string_view name);
std::string_view VariantName(Variant variant);
Variant ParseVariant(std::string_view name);

enum class AbortCode : std::uint8_t {
  kTooManyFacilities = 1,
  kTooFewFacilities = 2,
  kMissingExisting = 3,
  kVerificationFailed = 4,
  kTooFewUsers = 5,
  kStepViolation = 6,
  kMalformed = 7,
  kCryptoError = 8,
  kNotSetUp = 9,
  kInvalidFacility = 10,
  kWeakKey = 11,
  kSessionMismatch = 12,
};

std::string_view AbortCodeName(AbortCode code);

struct Abort {
  AbortCode code;
  std::string detail;
};

// Carries an Abort out of party code; sessions turn it into an ABORT message.
class ProtocolAbort : public std::runtime_error {
 public:
  explicit ProtocolAbort(Abort abort);
  const Abort& abort() const { return abort_; }

 private:
  Abort abort_;
};

// Exact fraction with a positive denominator, kept in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational Of(std::int64_t num, std::int64_t den);
  double ToDouble() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string ToString() const;
  friend bool operator==(const Rational&, const Rational&) = default;
};

struct RnnResult {
  std::vector<std::int64_t> counts;
  friend bool operator==(const RnnResult&, const RnnResult&) = default;
};

struct AvgResult {
  std::int64_t total = 0;
  std::int64_t count = 0;
  // Empty when count is zero (only reachable with differential privacy on).
  std::optional<Rational> average;
  friend bool operator==(const AvgResult&, const AvgResult&) = default;
};

struct MaxResult {
  // Empty when no bucket is nonzero.
  std::optional<std::int64_t> distance;
  std::int64_t w = 0;
  friend bool operator==(const MaxResult&, const MaxResult&) = default;
};

struct QueryResult {
  std::variant<RnnResult, AvgResult, MaxResult> value;
  // Set when the server added Laplace noise.
  std::optional<double> dp_epsilon;

  std::string ToString() const;
};

// AVGQ with zero common users and no noise: the average is undefined.
class NoCommonUsersError : public std::runtime_error {
 public:
  NoCommonUsersError() : std::runtime_error("no common users: average undefined") {}
};

}  // namespace locagg
