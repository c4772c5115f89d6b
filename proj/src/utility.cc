#include "locagg/utility.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "locagg/client_party.h"
#include "locagg/dp.h"
#include "locagg/oracle.h"
#include "locagg/server_party.h"

namespace locagg::harness {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kNoiseStreamTag = 0x6e6f697365ULL;

struct Evaluated {
  double objective = kInf;
  std::optional<std::int64_t> max_distance;
  std::int64_t w = 0;
};

Evaluated FromResult(const QueryResult& r) {
  Evaluated e;
  e.objective = Objective(r);
  if (const auto* max = std::get_if<MaxResult>(&r.value)) {
    e.max_distance = max->distance;
    e.w = max->w;
  }
  return e;
}

// Client-based protocol, one candidate at a time.
class ProtocolBackend {
 public:
  ProtocolBackend(const Instance& inst, const UtilityOptions& opts)
      : opts_(opts),
        rng_(opts.seed),
        kp_(paillier::GenerateKeyPair(opts.key_bits, rng_)),
        server_data_(inst.ServerData()),
        client_(inst.ClientData(), kp_),
        server_(server_data_, inst.facilities, Config(inst, opts), std::nullopt, opts.seed + 1) {
    const auto& indicator = client_.BuildIndicator(rng_);
    if (auto abort = server_.InstallIndicatorVector(kp_.pub, indicator.vec)) {
      throw ProtocolAbort(*abort);
    }
    store_ = server_.client_store();
  }

  void Prepare(const FacilitySet& fs) {
    agg_.push_back(server::AggregatesForQuery(store_->cache, server_.dataset(), store_->vec,
                                              kp_.pub, fs, opts_.metric));
  }

  Evaluated Run(std::size_t candidate, std::optional<double> eps, Rng& noise_rng) {
    const auto& agg = agg_[candidate];
    std::vector<paillier::Ciphertext> cts;
    switch (opts_.kind) {
      case QueryKind::kRnn:
        cts = server::RnnqClientAnswer(agg, kp_.pub, eps, rng_, noise_rng);
        break;
      case QueryKind::kAvg: {
        auto pair = server::AvgqClientAnswer(agg, kp_.pub, eps, rng_, noise_rng);
        cts.assign(pair.begin(), pair.end());
        break;
      }
      case QueryKind::kMax:
        cts = server::MaxqClientAnswer(agg, kp_.pub, eps, 2.0, rng_, noise_rng).buckets;
        break;
    }
    try {
      return FromResult(client::DecryptResults(kp_, opts_.kind, cts, eps));
    } catch (const NoCommonUsersError&) {
      return Evaluated{};
    }
  }

 private:
  static server::ServerConfig Config(const Instance& inst, const UtilityOptions& opts) {
    server::ServerConfig cfg;
    cfg.min_client_users = 1;
    cfg.metric = opts.metric;
    cfg.max_coordinate = inst.max_coordinate;
    return cfg;
  }

  const UtilityOptions& opts_;
  Rng rng_;
  paillier::KeyPair kp_;
  server::ServerDataset server_data_;
  client::ClientParty client_;
  server::ServerParty server_;
  std::shared_ptr<const server::ClientStore> store_;
  std::vector<server::QueryAggregates> agg_;
};

// Plaintext answers with the noise the server would add.
class OracleBackend {
 public:
  OracleBackend(const Instance& inst, const UtilityOptions& opts)
      : inst_(inst), opts_(opts), rng_(opts.seed), data_(inst.ServerData()) {}

  void Prepare(const FacilitySet& fs) {
    const auto plain = inst_.Plain(fs, opts_.metric);
    Entry e;
    e.rnn = oracle::ExactRnnq(plain);
    e.avg = oracle::ExactAvgq(plain);
    e.max = oracle::ExactMaxq(plain);
    e.server_max = server::AssignUsers(data_, fs.facilities, opts_.metric).max_distance;
    for (const Assignment& a : oracle::CommonAssignments(plain)) {
      if (e.histogram.size() <= static_cast<std::size_t>(a.distance)) {
        e.histogram.resize(a.distance + 1, 0);
      }
      ++e.histogram[a.distance];
    }
    entries_.push_back(std::move(e));
  }

  Evaluated Run(std::size_t candidate, std::optional<double> eps, Rng& noise_rng) {
    const Entry& e = entries_[candidate];
    switch (opts_.kind) {
      case QueryKind::kRnn: {
        const auto noise = server::DrawNoise(QueryKind::kRnn, e.rnn.size(), e.server_max, eps, noise_rng);
        RnnResult r{e.rnn};
        for (std::size_t i = 0; i < noise.size(); ++i) r.counts[i] += noise[i];
        return FromResult(QueryResult{r, eps});
      }
      case QueryKind::kAvg: {
        const auto noise = server::DrawNoise(QueryKind::kAvg, 2, e.server_max, eps, noise_rng);
        std::int64_t total = e.avg.total, count = e.avg.count;
        if (!noise.empty()) {
          total += noise[0];
          count += noise[1];
        }
        if (count == 0) return Evaluated{};
        return FromResult(QueryResult{AvgResult{total, count, Rational::Of(total, count)}, eps});
      }
      case QueryKind::kMax: {
        const std::int64_t w = server::DrawW(e.server_max, 2.0, rng_);
        const auto noise = server::DrawNoise(QueryKind::kMax, w + 1, e.server_max, eps, noise_rng);
        MaxResult r{std::nullopt, w};
        for (std::int64_t j = w; j >= 0; --j) {
          const std::int64_t count =
              j < static_cast<std::int64_t>(e.histogram.size()) ? e.histogram[j] : 0;
          if (count != 0 || (!noise.empty() && noise[j] != 0)) {
            r.distance = j;
            break;
          }
        }
        return FromResult(QueryResult{r, eps});
      }
    }
    return Evaluated{};
  }

 private:
  struct Entry {
    std::vector<std::int64_t> rnn;
    oracle::ExactAverage avg;
    std::optional<std::int64_t> max;
    std::int64_t server_max = 0;
    std::vector<std::int64_t> histogram;
  };

  const Instance& inst_;
  const UtilityOptions& opts_;
  Rng rng_;
  server::ServerDataset data_;
  std::vector<Entry> entries_;
};

template <typename Backend>
UtilityReport Evaluate(Backend& backend, const Instance& inst, const UtilityOptions& opts) {
  UtilityReport report;
  report.kind = opts.kind;
  report.candidates = GridCenters(opts.grid, inst.max_coordinate);
  if (opts.max_candidates > 0 && opts.max_candidates < report.candidates.size()) {
    report.candidates.resize(opts.max_candidates);
  }
  const std::size_t n = report.candidates.size();
  Rng unused(0);
  for (const Location& c : report.candidates) {
    backend.Prepare(FacilitySet::WithCandidate(inst.facilities, c));
  }
  for (std::size_t i = 0; i < n; ++i) {
    report.exact.push_back(backend.Run(i, std::nullopt, unused).objective);
  }
  report.exact_rank = RankAscending(report.exact);
  const std::size_t exact_best = static_cast<std::size_t>(
      std::find(report.exact_rank.begin(), report.exact_rank.end(), 1) - report.exact_rank.begin());

  Rng noise_base(opts.seed ^ kNoiseStreamTag);
  for (double eps : opts.epsilons) {
    EpsilonSeries s;
    s.epsilon = eps;
    double deviation_sum = 0;
    for (std::uint32_t t = 0; t < opts.trials; ++t) {
      Rng noise_rng = noise_base.Fork();
      std::vector<double> objective;
      for (std::size_t i = 0; i < n; ++i) {
        const Evaluated e = backend.Run(i, eps, noise_rng);
        objective.push_back(e.objective);
        if (opts.kind == QueryKind::kMax) {
          ++s.max_answers;
          if (e.max_distance && (*e.max_distance == e.w || *e.max_distance == e.w - 1)) {
            ++s.max_top_answers;
          }
        }
      }
      auto rank = RankAscending(objective);
      std::vector<std::size_t> deviation(n);
      for (std::size_t i = 0; i < n; ++i) {
        deviation[i] = rank[i] > report.exact_rank[i] ? rank[i] - report.exact_rank[i]
                                                      : report.exact_rank[i] - rank[i];
        deviation_sum += static_cast<double>(deviation[i]);
      }
      if (n > 0 && rank[exact_best] == 1) ++s.best_match_trials;
      s.objective.push_back(std::move(objective));
      s.rank.push_back(std::move(rank));
      s.deviation.push_back(std::move(deviation));
    }
    const double cells = static_cast<double>(opts.trials) * static_cast<double>(n);
    s.mean_abs_deviation = cells > 0 ? deviation_sum / cells : 0.0;
    report.series.push_back(std::move(s));
  }
  return report;
}

}  // namespace

double Objective(const QueryResult& result) {
  if (const auto* rnn = std::get_if<RnnResult>(&result.value)) {
    if (rnn->counts.empty()) return 0.0;
    const double n = static_cast<double>(rnn->counts.size());
    double mean = 0;
    for (auto c : rnn->counts) mean += static_cast<double>(c);
    mean /= n;
    double var = 0;
    for (auto c : rnn->counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
    return std::sqrt(var / n);
  }
  if (const auto* avg = std::get_if<AvgResult>(&result.value)) {
    if (avg->count <= 0) return kInf;
    return static_cast<double>(avg->total) / static_cast<double>(avg->count);
  }
  const auto& max = std::get<MaxResult>(result.value);
  return max.distance ? static_cast<double>(*max.distance) : kInf;
}

std::vector<std::size_t> RankAscending(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::size_t> rank(values.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

UtilityReport EvaluateUtility(const Instance& inst, const UtilityOptions& opts) {
  if (opts.backend == UtilityBackend::kProtocol) {
    ProtocolBackend backend(inst, opts);
    return Evaluate(backend, inst, opts);
  }
  OracleBackend backend(inst, opts);
  return Evaluate(backend, inst, opts);
}

void UtilityReport::WriteCsv(std::ostream& out) const {
  out << "epsilon,trial,candidate,x,y,exact,exact_rank,dp,dp_rank,rank_deviation\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out << "inf,0," << i << "," << candidates[i].x << "," << candidates[i].y << "," << exact[i]
        << "," << exact_rank[i] << "," << exact[i] << "," << exact_rank[i] << ",0\n";
  }
  for (const EpsilonSeries& s : series) {
    for (std::size_t t = 0; t < s.objective.size(); ++t) {
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        out << s.epsilon << "," << t << "," << i << "," << candidates[i].x << ","
            << candidates[i].y << "," << exact[i] << "," << exact_rank[i] << ","
            << s.objective[t][i] << "," << s.rank[t][i] << "," << s.deviation[t][i] << "\n";
      }
    }
  }
}

}  // namespace locagg::harness
