#include "locagg/geo.h"

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace locagg {
namespace {

std::int64_t ISqrt(std::int64_t v) {
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(v)));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

}  // namespace

std::string_view MetricName(Metric metric) {
  return metric == Metric::kL1 ? "l1" : "euclidean";
}

Metric ParseMetric(std::string_view name) {
  if (name == "euclidean") return Metric::kEuclidean;
  if (name == "l1") return Metric::kL1;
  throw std::invalid_argument("unknown metric: " + std::string(name));
}

bool InRange(const Location& loc, std::int32_t max_coordinate) {
  return loc.x >= 1 && loc.y >= 1 && loc.x <= max_coordinate && loc.y <= max_coordinate;
}

FacilitySet FacilitySet::Existing(std::vector<Location> existing) {
  FacilitySet fs;
  fs.existing_count = existing.size();
  fs.facilities = std::move(existing);
  return fs;
}

FacilitySet FacilitySet::WithCandidate(std::vector<Location> existing, Location candidate) {
  FacilitySet fs = Existing(std::move(existing));
  fs.facilities.push_back(candidate);
  return fs;
}

std::int64_t Distance(const Location& a, const Location& b, Metric metric) {
  const std::int64_t dx = std::llabs(static_cast<std::int64_t>(a.x) - b.x);
  const std::int64_t dy = std::llabs(static_cast<std::int64_t>(a.y) - b.y);
  if (metric == Metric::kL1) return dx + dy;
  // round(sqrt(s)) half-up: r + 1 iff s >= (r + 1/2)^2, i.e. 4s >= (2r + 1)^2.
  const std::int64_t s = dx * dx + dy * dy;
  const std::int64_t r = ISqrt(s);
  return 4 * s >= (2 * r + 1) * (2 * r + 1) ? r + 1 : r;
}

Assignment AssignNearest(const Location& user, std::span<const Location> facilities,
                         Metric metric) {
  if (facilities.empty()) throw std::invalid_argument("AssignNearest: empty facility set");
  Assignment best{0, Distance(user, facilities[0], metric)};
  for (std::size_t j = 1; j < facilities.size(); ++j) {
    const std::int64_t d = Distance(user, facilities[j], metric);
    if (d < best.distance) best = Assignment{static_cast<std::uint32_t>(j), d};
  }
  return best;
}

}  // namespace locagg
