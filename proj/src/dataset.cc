#include "locagg/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "locagg/rng.h"

namespace locagg::harness {
namespace {

namespace fs = std::filesystem;

// Floyd's algorithm: `count` distinct values from [0, n), sorted.
std::vector<std::uint64_t> SampleDistinct(std::uint64_t n, std::uint64_t count, Rng& rng) {
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(count * 2);
  for (std::uint64_t j = n - count; j < n; ++j) {
    const std::uint64_t t = rng.UniformU64(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::uint64_t> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

Location RandomLocation(std::int32_t max_coordinate, Rng& rng) {
  return Location{static_cast<std::int32_t>(rng.UniformInt(1, max_coordinate)),
                  static_cast<std::int32_t>(rng.UniformInt(1, max_coordinate))};
}

std::vector<Location> RandomFacilities(std::uint32_t k, std::int32_t max_coordinate, Rng& rng) {
  const auto side = static_cast<std::uint64_t>(max_coordinate);
  if (k > side * side) throw std::invalid_argument("more facilities than grid points");
  std::set<Location> seen;
  std::vector<Location> out;
  while (out.size() < k) {
    Location l = RandomLocation(max_coordinate, rng);
    if (seen.insert(l).second) out.push_back(l);
  }
  return out;
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string Trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

template <typename T>
T ParseNumber(const std::string& cell) {
  std::istringstream in(Trim(cell));
  T v{};
  in >> v;
  if (!in || in.peek() != std::char_traits<char>::eof()) {
    throw std::invalid_argument("bad number '" + cell + "'");
  }
  return v;
}

// Reads a CSV with a header; calls row(cells, line_number) for each data line.
template <typename F>
void ForEachRow(const fs::path& path, std::size_t columns, F&& row) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    auto cells = SplitCsv(line);
    if (cells.size() != columns) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(columns) + " columns");
    }
    row(cells, line_no);
  }
}

}  // namespace

void SyntheticSpec::Validate() const {
  if (n_i > std::min(n_s, n_c)) throw std::invalid_argument("n_I exceeds min(n_s, n_c)");
  if (n_s + n_c - n_i > n) throw std::invalid_argument("n_s + n_c - n_I exceeds n");
  if (k == 0) throw std::invalid_argument("k must be positive");
  if (max_coordinate < 1) throw std::invalid_argument("max coordinate must be positive");
  const auto side = static_cast<std::uint64_t>(max_coordinate);
  if (k > side * side) throw std::invalid_argument("more facilities than grid points");
}

server::ServerDataset Instance::ServerData() const {
  return server::ServerDataset{superset_size, server_users};
}

client::ClientDataset Instance::ClientData() const {
  return client::ClientDataset{superset_size, client_ids};
}

oracle::PlainInstance Instance::Plain(FacilitySet fs, Metric metric) const {
  return oracle::PlainInstance{server_users, client_ids, std::move(fs), metric};
}

std::size_t Instance::CommonCount() const {
  std::size_t count = 0;
  for (const UserRecord& u : server_users) {
    count += std::binary_search(client_ids.begin(), client_ids.end(), u.id) ? 1 : 0;
  }
  return count;
}

Instance GenerateSynthetic(const SyntheticSpec& spec) {
  spec.Validate();
  Rng rng(spec.seed);
  std::vector<std::uint64_t> ids = SampleDistinct(spec.n, spec.n_s + spec.n_c - spec.n_i, rng);
  std::shuffle(ids.begin(), ids.end(), rng);
  // [0, n_I) common, then server-only, then client-only.
  const auto common_end = ids.begin() + static_cast<std::ptrdiff_t>(spec.n_i);
  const auto server_end = ids.begin() + static_cast<std::ptrdiff_t>(spec.n_s);

  Instance inst;
  inst.superset_size = spec.n;
  inst.max_coordinate = spec.max_coordinate;
  std::vector<std::uint64_t> server_ids(ids.begin(), server_end);
  std::sort(server_ids.begin(), server_ids.end());
  inst.server_users.reserve(server_ids.size());
  for (std::uint64_t id : server_ids) {
    inst.server_users.push_back(UserRecord{id, RandomLocation(spec.max_coordinate, rng)});
  }
  inst.client_ids.assign(ids.begin(), common_end);
  inst.client_ids.insert(inst.client_ids.end(), server_end, ids.end());
  std::sort(inst.client_ids.begin(), inst.client_ids.end());
  inst.facilities = RandomFacilities(spec.k, spec.max_coordinate, rng);
  return inst;
}

void WriteInstance(const Instance& inst, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json meta = {{"superset_size", inst.superset_size},
                         {"max_coordinate", inst.max_coordinate},
                         {"server_users", inst.server_users.size()},
                         {"client_users", inst.client_ids.size()},
                         {"facilities", inst.facilities.size()}};
  std::ofstream(dir / "instance.json") << meta.dump(2) << "\n";

  std::ofstream users(dir / "server_users.csv");
  users << "id,x,y\n";
  for (const UserRecord& u : inst.server_users) {
    users << u.id << "," << u.location.x << "," << u.location.y << "\n";
  }
  std::ofstream clients(dir / "client_ids.csv");
  clients << "id\n";
  for (UserId id : inst.client_ids) clients << id << "\n";
  std::ofstream facilities(dir / "facilities.csv");
  facilities << "x,y,kind\n";
  for (const Location& f : inst.facilities) facilities << f.x << "," << f.y << ",existing\n";
  if (!users || !clients || !facilities) throw std::runtime_error("failed writing " + dir.string());
}

std::vector<Location> ReadFacilities(const fs::path& csv) {
  std::vector<Location> out;
  ForEachRow(csv, 3, [&](const std::vector<std::string>& c, std::size_t) {
    out.push_back(Location{ParseNumber<std::int32_t>(c[0]), ParseNumber<std::int32_t>(c[1])});
  });
  return out;
}

Instance ReadInstance(const fs::path& dir) {
  std::ifstream meta_in(dir / "instance.json");
  if (!meta_in) throw std::runtime_error("cannot read " + (dir / "instance.json").string());
  const nlohmann::json meta = nlohmann::json::parse(meta_in);
  Instance inst;
  inst.superset_size = meta.at("superset_size").get<std::uint64_t>();
  inst.max_coordinate = meta.at("max_coordinate").get<std::int32_t>();
  ForEachRow(dir / "server_users.csv", 3, [&](const std::vector<std::string>& c, std::size_t) {
    inst.server_users.push_back(
        UserRecord{ParseNumber<std::uint64_t>(c[0]),
                   Location{ParseNumber<std::int32_t>(c[1]), ParseNumber<std::int32_t>(c[2])}});
  });
  ForEachRow(dir / "client_ids.csv", 1, [&](const std::vector<std::string>& c, std::size_t) {
    inst.client_ids.push_back(ParseNumber<std::uint64_t>(c[0]));
  });
  inst.facilities = ReadFacilities(dir / "facilities.csv");
  std::sort(inst.server_users.begin(), inst.server_users.end(),
            [](const UserRecord& a, const UserRecord& b) { return a.id < b.id; });
  std::sort(inst.client_ids.begin(), inst.client_ids.end());
  inst.ServerData().Validate(inst.max_coordinate);
  inst.ClientData().Validate();
  return inst;
}

std::int32_t ScaleCoordinate(double v, double lo, double hi, std::int32_t max_coordinate) {
  if (!(hi > lo)) return 1;
  const double t = (v - lo) / (hi - lo);
  const auto scaled = static_cast<std::int32_t>(std::llround(1.0 + t * (max_coordinate - 1)));
  return std::clamp(scaled, 1, max_coordinate);
}

Instance IngestCheckins(const fs::path& csv, std::int32_t max_coordinate, std::uint32_t k,
                        std::uint64_t seed, IngestReport* report) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot read " + csv.string());
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  rep = IngestReport{};

  struct Point { double lat, lon; };
  std::vector<Point> points;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw std::runtime_error(csv.string() + ": empty file");
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    ++rep.rows;
    const auto cells = SplitCsv(line);
    try {
      if (cells.size() != 3) throw std::invalid_argument("expected 3 columns");
      const double lat = ParseNumber<double>(cells[1]);
      const double lon = ParseNumber<double>(cells[2]);
      if (!std::isfinite(lat) || !std::isfinite(lon)) throw std::invalid_argument("non-finite");
      points.push_back(Point{lat, lon});
    } catch (const std::invalid_argument& e) {
      rep.skipped.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (rep.skipped.size() * 100 > rep.rows) {
    throw std::runtime_error(csv.string() + ": " + std::to_string(rep.skipped.size()) + " of " +
                             std::to_string(rep.rows) + " rows malformed (over 1%)");
  }
  if (points.empty()) throw std::runtime_error(csv.string() + ": no check-ins");

  double lat_lo = points[0].lat, lat_hi = points[0].lat;
  double lon_lo = points[0].lon, lon_hi = points[0].lon;
  for (const Point& p : points) {
    lat_lo = std::min(lat_lo, p.lat);
    lat_hi = std::max(lat_hi, p.lat);
    lon_lo = std::min(lon_lo, p.lon);
    lon_hi = std::max(lon_hi, p.lon);
  }
  Instance inst;
  inst.superset_size = points.size();
  inst.max_coordinate = max_coordinate;
  for (std::size_t i = 0; i < points.size(); ++i) {
    inst.server_users.push_back(
        UserRecord{i, Location{ScaleCoordinate(points[i].lon, lon_lo, lon_hi, max_coordinate),
                               ScaleCoordinate(points[i].lat, lat_lo, lat_hi, max_coordinate)}});
  }
  Rng rng(seed);
  const auto n_c = static_cast<std::uint64_t>(std::llround(0.2 * static_cast<double>(points.size())));
  inst.client_ids = SampleDistinct(points.size(), n_c, rng);
  inst.facilities = RandomFacilities(k, max_coordinate, rng);
  return inst;
}

std::vector<Location> GridCenters(std::uint32_t g, std::int32_t max_coordinate) {
  std::vector<std::int32_t> axis;
  for (std::uint32_t i = 0; i < g; ++i) {
    const double c = (i + 0.5) * static_cast<double>(max_coordinate) / g;
    axis.push_back(std::clamp(static_cast<std::int32_t>(std::llround(c)), 1, max_coordinate));
  }
  std::vector<Location> out;
  for (std::int32_t y : axis) {
    for (std::int32_t x : axis) out.push_back(Location{x, y});
  }
  return out;
}

}  // namespace locagg::harness
