#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "locagg/dataset.h"
#include "locagg/query.h"

namespace locagg::harness {

// (pre + n_q * query) / n_q.
double AmortizedPerQuery(double precompute, double per_query, std::size_t n_q);

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r_squared = 0;
};

// Least squares y = slope * x + intercept.
LinearFit FitLine(std::span<const double> xs, std::span<const double> ys);

double Median(std::vector<double> values);

struct BenchOptions {
  Variant variant = Variant::kClientBased;
  QueryKind kind = QueryKind::kAvg;
  std::size_t repetitions = 5;
  std::size_t key_bits = 256;
  std::uint64_t seed = 1;
  Metric metric = Metric::kEuclidean;
  std::optional<double> epsilon;
  std::size_t amortize_over = 100;  // n_q
  // Server-based: fill the E(0)/E(1) pool for all repetitions beforehand.
  bool precompute_pool = false;
};

struct BenchRow {
  std::string protocol;  // e.g. "AVGQ/C"
  std::uint64_t n = 0, n_s = 0, n_c = 0;
  std::size_t k = 0;
  double setup_ms = 0;       // client: indicator vector; server: key generation
  double precompute_ms = 0;  // verification + aggregates, or E(0)/E(1) pool
  double query_ms = 0;       // median per query, whole session step chain
  double amortized_ms = 0;
  std::size_t n_q = 0;
  std::size_t bytes_per_query = 0;
  std::size_t frames_per_query = 0;
  // Client-based: users reassigned / exponentiations of the last query.
  std::size_t reassigned_users = 0;
  std::size_t exponentiations = 0;
};

// Queries use random candidates (one per repetition) appended to the existing
// facilities, run through in-process sessions.
BenchRow RunBench(const Instance& inst, const BenchOptions& opts);

void WriteBenchCsv(std::ostream& out, std::span<const BenchRow> rows);

std::string ProtocolLabel(QueryKind kind, Variant variant);

}  // namespace locagg::harness
