#include "locagg/bench.h"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "locagg/client_party.h"
#include "locagg/server_party.h"
#include "locagg/session.h"

namespace locagg::harness {
namespace {

using Clock = std::chrono::steady_clock;

double MsSince(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

}  // namespace

double AmortizedPerQuery(double precompute, double per_query, std::size_t n_q) {
  if (n_q == 0) throw std::invalid_argument("n_q must be positive");
  return (precompute + static_cast<double>(n_q) * per_query) / static_cast<double>(n_q);
}

LinearFit FitLine(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("need >= 2 points");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0) throw std::invalid_argument("x values are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

double Median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : (values[mid - 1] + values[mid]) / 2;
}

std::string ProtocolLabel(QueryKind kind, Variant variant) {
  std::string label = kind == QueryKind::kRnn ? "RNNQ" : kind == QueryKind::kAvg ? "AVGQ" : "MAXQ";
  return label + (variant == Variant::kServerBased ? "/S" : "/C");
}

BenchRow RunBench(const Instance& inst, const BenchOptions& opts) {
  if (opts.repetitions == 0) throw std::invalid_argument("repetitions must be positive");
  BenchRow row;
  row.protocol = ProtocolLabel(opts.kind, opts.variant);
  row.n = inst.superset_size;
  row.n_s = inst.server_users.size();
  row.n_c = inst.client_ids.size();
  row.k = inst.facilities.size();
  row.n_q = opts.amortize_over;

  Rng rng(opts.seed);
  server::ServerConfig cfg;
  cfg.min_client_users = 1;
  cfg.metric = opts.metric;
  cfg.max_coordinate = inst.max_coordinate;
  cfg.epsilon = opts.epsilon;

  std::optional<paillier::KeyPair> server_key, client_key;
  auto t = Clock::now();
  if (opts.variant == Variant::kServerBased) {
    server_key = paillier::GenerateKeyPair(opts.key_bits, rng);
  } else {
    client_key = paillier::GenerateKeyPair(opts.key_bits, rng);
  }
  server::ServerParty server(inst.ServerData(), inst.facilities, cfg, server_key, opts.seed + 1);
  client::ClientParty client(inst.ClientData(), client_key);

  if (opts.variant == Variant::kClientBased) {
    t = Clock::now();
    const auto& indicator = client.BuildIndicator(rng);
    row.setup_ms = MsSince(t);
    t = Clock::now();
    if (auto abort = server.InstallIndicatorVector(client_key->pub, indicator.vec)) {
      throw ProtocolAbort(*abort);
    }
    row.precompute_ms = MsSince(t);
  } else {
    row.setup_ms = MsSince(t);
    if (opts.precompute_pool) {
      const std::size_t rows = opts.kind == QueryKind::kRnn ? inst.facilities.size() + 1 : 2;
      const std::size_t per_query = rows * inst.superset_size;
      t = Clock::now();
      server.PrecomputePool(per_query * opts.repetitions, 2 * row.n_s * opts.repetitions);
      row.precompute_ms = MsSince(t);
    }
  }

  std::vector<double> times;
  std::size_t bytes = 0, frames = 0;
  for (std::size_t r = 0; r < opts.repetitions; ++r) {
    const Location candidate{static_cast<std::int32_t>(rng.UniformInt(1, inst.max_coordinate)),
                             static_cast<std::int32_t>(rng.UniformInt(1, inst.max_coordinate))};
    session::ServerSession ss(server, server.ForkSessionRng());
    session::ClientSession cs(client, opts.variant, rng.Fork());
    cs.EnqueueQuery(opts.kind, candidate);
    session::RunInProcess(ss, cs);
    if (cs.abort()) throw ProtocolAbort(*cs.abort());
    if (ss.abort()) throw ProtocolAbort(*ss.abort());
    const auto& outcome = cs.outcomes().at(0);
    times.push_back(outcome.elapsed_ms);
    // Only the query's own frames (steps >= 1).
    bytes = frames = 0;
    for (const auto& e : cs.transcript().entries()) {
      if (e.direction != session::Direction::kLocal && e.step >= 1) {
        bytes += e.frame_bytes;
        ++frames;
      }
    }
    if (ss.last_aggregates()) {
      row.reassigned_users = ss.last_aggregates()->reassigned_users;
      row.exponentiations = ss.last_aggregates()->exponentiations;
    }
  }
  row.query_ms = Median(times);
  row.amortized_ms = AmortizedPerQuery(row.precompute_ms, row.query_ms, row.n_q);
  row.bytes_per_query = bytes;
  row.frames_per_query = frames;
  return row;
}

void WriteBenchCsv(std::ostream& out, std::span<const BenchRow> rows) {
  out << "protocol,n,n_s,n_c,k,setup_ms,precompute_ms,query_ms,n_q,amortized_ms,"
         "bytes_per_query,frames_per_query,reassigned_users,exponentiations\n";
  for (const BenchRow& r : rows) {
    out << r.protocol << "," << r.n << "," << r.n_s << "," << r.n_c << "," << r.k << ","
        << r.setup_ms << "," << r.precompute_ms << "," << r.query_ms << "," << r.n_q << ","
        << r.amortized_ms << "," << r.bytes_per_query << "," << r.frames_per_query << ","
        << r.reassigned_users << "," << r.exponentiations << "\n";
  }
}

}  // namespace locagg::harness
