#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace locagg {

using UserId = std::uint64_t;

inline constexpr std::int32_t kDefaultMaxCoordinate = 10'000;

struct Location {
  std::int32_t x = 0;
  std::int32_t y = 0;

  friend auto operator<=>(const Location&, const Location&) = default;
};

enum class Metric : std::uint8_t { kEuclidean = 0, kL1 = 1 };

std::string_view MetricName(Metric metric);
Metric ParseMetric(std::string_view name);

bool InRange(const Location& loc, std::int32_t max_coordinate);

// A server-side user: superset index plus location.
struct UserRecord {
  UserId id = 0;
  Location location;
};

// Existing facilities first, candidates after them.
struct FacilitySet {
  std::vector<Location> facilities;
  std::size_t existing_count = 0;

  std::size_t size() const { return facilities.size(); }
  bool empty() const { return facilities.empty(); }

  static FacilitySet Existing(std::vector<Location> existing);
  // existing + one candidate appended.
  static FacilitySet WithCandidate(std::vector<Location> existing, Location candidate);
};

struct Assignment {
  std::uint32_t nearest_index = 0;
  std::int64_t distance = 0;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

// Euclidean distance rounded half-up to an integer, or the exact L1 distance.
std::int64_t Distance(const Location& a, const Location& b, Metric metric);

// Minimum-distance facility; ties go to the lowest index. Throws on an empty set.
Assignment AssignNearest(const Location& user, std::span<const Location> facilities,
                         Metric metric);
inline Assignment AssignNearest(const Location& user, const FacilitySet& fs, Metric metric) {
  return AssignNearest(user, std::span<const Location>(fs.facilities), metric);
}

}  // namespace locagg
