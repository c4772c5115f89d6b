#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "locagg/geo.h"
#include "locagg/query.h"

// Plaintext reference answers for the three queries, computed directly on the
// joined data with the same distance discretisation and tie rule as the
// protocols.
namespace locagg::oracle {

struct PlainInstance {
  std::vector<UserRecord> server_users;
  std::vector<UserId> client_ids;
  FacilitySet facilities;
  Metric metric = Metric::kEuclidean;
};

// Nearest assignment of every common user (server users whose id the client
// also holds), in server_users order.
std::vector<Assignment> CommonAssignments(const PlainInstance& inst);

std::vector<std::int64_t> ExactRnnq(const PlainInstance& inst);

struct ExactAverage {
  std::int64_t total = 0;
  std::int64_t count = 0;
  std::optional<Rational> average;  // empty when count == 0
};
ExactAverage ExactAvgq(const PlainInstance& inst);

std::optional<std::int64_t> ExactMaxq(const PlainInstance& inst);

}  // namespace locagg::oracle
