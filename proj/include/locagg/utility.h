#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "locagg/dataset.h"
#include "locagg/geo.h"
#include "locagg/query.h"

// Candidate ranking under exact and differentially private answers.
namespace locagg::harness {

enum class UtilityBackend {
  // Client-based protocol: the client's encrypted indicator vector, the
  // server's aggregates and noisy answers, client decryption.
  kProtocol,
  // Plaintext oracle answers with the same noise draws.
  kOracle,
};

struct UtilityOptions {
  QueryKind kind = QueryKind::kRnn;
  std::vector<double> epsilons;  // each one is a series; no entry = exact only
  std::uint32_t grid = 10;
  std::uint32_t trials = 1;
  std::uint64_t seed = 1;
  Metric metric = Metric::kEuclidean;
  UtilityBackend backend = UtilityBackend::kProtocol;
  std::size_t key_bits = 256;
  // Restricts the evaluation to the first candidates of the grid (0 = all).
  std::size_t max_candidates = 0;
};

struct EpsilonSeries {
  double epsilon = 0;
  // [trial][candidate]
  std::vector<std::vector<double>> objective;
  std::vector<std::vector<std::size_t>> rank;
  std::vector<std::vector<std::size_t>> deviation;
  double mean_abs_deviation = 0;
  std::size_t best_match_trials = 0;  // DP best candidate == exact best
  // MAXQ: answers equal to w or w - 1, out of all answers.
  std::size_t max_top_answers = 0;
  std::size_t max_answers = 0;
};

struct UtilityReport {
  QueryKind kind = QueryKind::kRnn;
  std::vector<Location> candidates;
  std::vector<double> exact;
  std::vector<std::size_t> exact_rank;
  std::vector<EpsilonSeries> series;

  void WriteCsv(std::ostream& out) const;
};

// RNNQ: population standard deviation of the counts. AVGQ: average distance
// (+inf without a positive count). MAXQ: max distance (+inf when no result).
double Objective(const QueryResult& result);

// Ranks 1..N ascending by value; ties keep the lower index first.
std::vector<std::size_t> RankAscending(const std::vector<double>& values);

UtilityReport EvaluateUtility(const Instance& inst, const UtilityOptions& opts);

}  // namespace locagg::harness
