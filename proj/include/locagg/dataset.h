#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "locagg/client_party.h"
#include "locagg/geo.h"
#include "locagg/oracle.h"
#include "locagg/server_party.h"

namespace locagg::harness {

struct SyntheticSpec {
  std::uint64_t n = 1'000'000;
  std::uint64_t n_s = 100'000;
  std::uint64_t n_c = 20'000;
  std::uint64_t n_i = 0;
  std::uint32_t k = 25;
  std::int32_t max_coordinate = kDefaultMaxCoordinate;
  std::uint64_t seed = 1;

  // n_I <= min(n_s, n_c), n_s + n_c - n_I <= n, k <= number of grid points.
  void Validate() const;
};

// A complete two-party instance: both user sets plus the existing facilities.
struct Instance {
  std::uint64_t superset_size = 0;
  std::int32_t max_coordinate = kDefaultMaxCoordinate;
  std::vector<UserRecord> server_users;  // sorted by id
  std::vector<UserId> client_ids;        // sorted
  std::vector<Location> facilities;      // existing

  server::ServerDataset ServerData() const;
  client::ClientDataset ClientData() const;
  oracle::PlainInstance Plain(FacilitySet fs, Metric metric) const;
  std::size_t CommonCount() const;
};

Instance GenerateSynthetic(const SyntheticSpec& spec);

// Directory layout: instance.json, server_users.csv (id,x,y),
// client_ids.csv (id), facilities.csv (x,y,kind).
void WriteInstance(const Instance& inst, const std::filesystem::path& dir);
Instance ReadInstance(const std::filesystem::path& dir);

std::vector<Location> ReadFacilities(const std::filesystem::path& csv);

struct IngestReport {
  std::size_t rows = 0;
  std::vector<std::string> skipped;  // "line N: reason"
};

// CSV with header user_key,lat,lon. Every valid row is one server user; a
// seeded 20% sample forms the client; k existing facilities are drawn at
// random. Throws when more than 1% of the rows are malformed.
Instance IngestCheckins(const std::filesystem::path& csv, std::int32_t max_coordinate,
                        std::uint32_t k, std::uint64_t seed, IngestReport* report = nullptr);

// Min-max scaling of v from [lo, hi] to the integers [1, max_coordinate];
// a degenerate range maps to 1.
std::int32_t ScaleCoordinate(double v, double lo, double hi, std::int32_t max_coordinate);

// Centers of a g x g grid: ((i + 1/2) * max / g) rounded, per axis.
std::vector<Location> GridCenters(std::uint32_t g, std::int32_t max_coordinate);

}  // namespace locagg::harness
