#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "locagg/bench.h"
#include "locagg/client_party.h"
#include "locagg/dataset.h"
#include "locagg/dp.h"
#include "locagg/net.h"
#include "locagg/oracle.h"
#include "locagg/paillier.h"
#include "locagg/server_party.h"
#include "locagg/session.h"
#include "locagg/utility.h"
#include "locagg/wire.h"

namespace {

using namespace locagg;
using nlohmann::json;

std::string Hex(const BigInt& v) { return v.get_str(16); }

BigInt FromHex(const std::string& s) {
  BigInt v;
  if (v.set_str(s, 16) != 0) throw std::runtime_error("bad hex integer in key file");
  return v;
}

void WriteKeyFile(const std::string& path, const paillier::KeyPair& kp) {
  const json j = {{"p", Hex(kp.priv.p)}, {"q", Hex(kp.priv.q)}, {"g", Hex(kp.pub.g)},
                  {"bits", kp.pub.bits()}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

paillier::KeyPair ReadKeyFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  const json j = json::parse(in);
  return paillier::KeyPair::FromPrimes(FromHex(j.at("p")), FromHex(j.at("q")),
                                       FromHex(j.at("g")));
}

Location ParseLocation(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw CLI::ValidationError("location must be x,y");
  return Location{std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
}

std::vector<double> ParseEpsilons(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    out.push_back(item == "ln2" ? dp::kEpsilonLn2 : std::stod(item));
  }
  return out;
}

std::pair<std::string, std::uint16_t> ParseEndpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("endpoint must be host:port");
  return {s.substr(0, colon), static_cast<std::uint16_t>(std::stoi(s.substr(colon + 1)))};
}

struct ServerFlags {
  std::uint32_t theta1 = 1;
  std::uint32_t theta2 = 0;
  std::uint64_t min_client_users = 100;
  std::optional<double> epsilon;
  std::string metric = "euclidean";
  bool production = false;

  void Add(CLI::App* app) {
    app->add_option("--theta1", theta1, "max new facilities per query");
    app->add_option("--theta2", theta2, "max removed existing facilities per query");
    app->add_option("--min-client-users", min_client_users, "client-based setup threshold");
    app->add_option("--dp-epsilon", epsilon, "Laplace noise parameter (off when absent)");
    app->add_option("--metric", metric, "euclidean|l1")->check(CLI::IsMember({"euclidean", "l1"}));
    app->add_flag("--production", production, "require 1024-bit keys");
  }

  server::ServerConfig Config(const harness::Instance& inst) const {
    server::ServerConfig cfg;
    cfg.theta1 = theta1;
    cfg.theta2 = theta2;
    cfg.min_client_users = min_client_users;
    cfg.epsilon = epsilon;
    cfg.metric = ParseMetric(metric);
    cfg.max_coordinate = inst.max_coordinate;
    cfg.production = production;
    return cfg;
  }
};

void InstallIndicatorFile(server::ServerParty& party, const std::string& path) {
  const wire::IndicatorVectorMsg msg = wire::ReadIndicatorFile(path);
  if (!msg.client_key) throw std::runtime_error(path + ": no client public key");
  EncryptedIndicatorVector vec;
  vec.entries = wire::Ciphertexts(msg.entries, *msg.client_key);
  vec.declared_count = msg.declared_count;
  vec.combined_randomizer = msg.combined_randomizer;
  if (auto abort = party.InstallIndicatorVector(*msg.client_key, std::move(vec))) {
    throw ProtocolAbort(*abort);
  }
}

void PrintTranscript(const session::Transcript& t) {
  std::printf("%-10s %-4s %-18s %12s %10s %12s\n", "direction", "step", "message", "bytes",
              "values", "elapsed_ms");
  for (const auto& e : t.entries()) {
    const char* dir = e.direction == session::Direction::kSent       ? "sent"
                      : e.direction == session::Direction::kReceived ? "received"
                                                                      : "local";
    std::printf("%-10s %-4d %-18s %12zu %10zu %12.3f\n", dir, e.step,
                std::string(wire::MessageTypeName(e.type)).c_str(), e.frame_bytes, e.values,
                e.elapsed_ms);
  }
}

int ReportClient(const session::ClientSession& cs) {
  PrintTranscript(cs.transcript());
  std::size_t bytes = 0;
  for (const auto& e : cs.transcript().entries()) bytes += e.frame_bytes;
  std::printf("bytes transferred: %zu\n", bytes);
  for (const auto& o : cs.outcomes()) {
    if (o.result) {
      std::printf("%s (%.3f ms)\n", o.result->ToString().c_str(), o.elapsed_ms);
    } else {
      std::printf("error: %s\n", o.error.value_or("no result").c_str());
    }
  }
  if (cs.abort()) {
    std::fprintf(stderr, "ABORT(%s) at step %d: %s\n",
                 std::string(AbortCodeName(cs.abort()->code)).c_str(), cs.step(),
                 cs.abort()->detail.c_str());
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Private aggregate location queries between a server and a client"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();

  // keygen
  auto* keygen = app.add_subcommand("keygen", "generate a Paillier key pair");
  std::size_t bits = 1024;
  std::string key_out;
  keygen->add_option("--bits", bits)->capture_default_str();
  keygen->add_option("--out", key_out)->required();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic instance");
  harness::SyntheticSpec spec;
  std::string out_dir;
  gen->add_option("--n", spec.n)->capture_default_str();
  gen->add_option("--ns", spec.n_s)->capture_default_str();
  gen->add_option("--nc", spec.n_c)->capture_default_str();
  gen->add_option("--ni", spec.n_i)->capture_default_str();
  gen->add_option("--k", spec.k)->capture_default_str();
  gen->add_option("--max-coord", spec.max_coordinate)->capture_default_str();
  gen->add_option("--out", out_dir)->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "turn a check-in CSV (user_key,lat,lon) into an instance");
  std::string csv_path;
  std::int32_t ingest_max = kDefaultMaxCoordinate;
  std::uint32_t ingest_k = 25;
  ingest->add_option("--csv", csv_path)->required();
  ingest->add_option("--max-coord", ingest_max)->capture_default_str();
  ingest->add_option("--k", ingest_k)->capture_default_str();
  ingest->add_option("--out", out_dir)->required();

  // setup
  auto* setup = app.add_subcommand("setup", "build, self-verify and store the client's indicator vector");
  std::string instance_dir, client_key_path, indicator_path;
  std::uint64_t setup_min_users = 100;
  setup->add_option("--instance", instance_dir)->required();
  setup->add_option("--client-key", client_key_path)->required();
  setup->add_option("--out", indicator_path)->required();
  setup->add_option("--min-client-users", setup_min_users)->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "run the server over TCP");
  ServerFlags serve_flags;
  std::string listen = "127.0.0.1:7400", server_key_path;
  std::size_t max_sessions = 0;
  serve->add_option("--instance", instance_dir)->required();
  serve->add_option("--server-key", server_key_path, "enables the server-based protocols");
  serve->add_option("--indicator", indicator_path, "stored client indicator vector");
  serve->add_option("--listen", listen)->capture_default_str();
  serve->add_option("--max-sessions", max_sessions, "exit after this many (0 = never)");
  serve_flags.Add(serve);

  // query
  auto* query = app.add_subcommand("query", "run one query session");
  ServerFlags query_flags;
  std::string query_kind = "rnn", variant = "client-based", connect;
  std::vector<std::string> candidates;
  query->add_option("--instance", instance_dir)->required();
  query->add_option("--query", query_kind)->check(CLI::IsMember({"rnn", "avg", "max"}));
  query->add_option("--variant", variant)->check(CLI::IsMember({"server-based", "client-based"}));
  query->add_option("--candidate", candidates, "x,y; repeat for several queries");
  query->add_option("--connect", connect, "host:port of a running server; in-process otherwise");
  query->add_option("--server-key", server_key_path);
  query->add_option("--client-key", client_key_path);
  query->add_option("--indicator", indicator_path, "in-process: vector the server already stores");
  query->add_option("--bits", bits, "size of keys generated when no key file is given")
      ->capture_default_str();
  query_flags.Add(query);

  // oracle
  auto* oracle_cmd = app.add_subcommand("oracle", "plaintext answer on the joined data");
  std::string oracle_metric = "euclidean";
  oracle_cmd->add_option("--instance", instance_dir)->required();
  oracle_cmd->add_option("--query", query_kind)->check(CLI::IsMember({"rnn", "avg", "max"}));
  oracle_cmd->add_option("--candidate", candidates);
  oracle_cmd->add_option("--metric", oracle_metric)->check(CLI::IsMember({"euclidean", "l1"}));

  // utility-eval
  auto* util = app.add_subcommand("utility-eval", "rank grid candidates with and without noise");
  std::string eps_list = "ln2,0.1,0.01", backend = "protocol", report_out;
  harness::UtilityOptions uopts;
  util->add_option("--instance", instance_dir)->required();
  util->add_option("--query", query_kind)->check(CLI::IsMember({"rnn", "avg", "max"}));
  util->add_option("--epsilons", eps_list)->capture_default_str();
  util->add_option("--grid", uopts.grid)->capture_default_str();
  util->add_option("--trials", uopts.trials)->capture_default_str();
  util->add_option("--backend", backend)->check(CLI::IsMember({"protocol", "oracle"}));
  util->add_option("--bits", uopts.key_bits)->capture_default_str();
  util->add_option("--metric", oracle_metric)->check(CLI::IsMember({"euclidean", "l1"}));
  util->add_option("--out", report_out, "CSV report");

  // bench
  auto* bench = app.add_subcommand("bench", "time setup, precomputation and queries");
  harness::BenchOptions bopts;
  std::optional<double> bench_eps;
  bench->add_option("--instance", instance_dir)->required();
  bench->add_option("--query", query_kind)->check(CLI::IsMember({"rnn", "avg", "max"}));
  bench->add_option("--variant", variant)->check(CLI::IsMember({"server-based", "client-based"}));
  bench->add_option("--reps", bopts.repetitions)->capture_default_str();
  bench->add_option("--bits", bopts.key_bits)->capture_default_str();
  bench->add_option("--nq", bopts.amortize_over, "queries to amortize over")->capture_default_str();
  bench->add_option("--dp-epsilon", bench_eps);
  bench->add_flag("--pool", bopts.precompute_pool, "server-based: precompute E(0)/E(1)");
  bench->add_option("--metric", oracle_metric)->check(CLI::IsMember({"euclidean", "l1"}));
  bench->add_option("--out", report_out, "CSV output (stdout otherwise)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (keygen->parsed()) {
      Rng rng(seed);
      const auto kp = paillier::GenerateKeyPair(bits, rng);
      WriteKeyFile(key_out, kp);
      std::printf("wrote %zu-bit key to %s\n", kp.pub.bits(), key_out.c_str());
      return 0;
    }
    if (gen->parsed()) {
      spec.seed = seed;
      const auto inst = harness::GenerateSynthetic(spec);
      harness::WriteInstance(inst, out_dir);
      std::printf("wrote n=%llu n_s=%zu n_c=%zu n_I=%zu k=%zu to %s\n",
                  static_cast<unsigned long long>(inst.superset_size), inst.server_users.size(),
                  inst.client_ids.size(), inst.CommonCount(), inst.facilities.size(),
                  out_dir.c_str());
      return 0;
    }
    if (ingest->parsed()) {
      harness::IngestReport rep;
      const auto inst = harness::IngestCheckins(csv_path, ingest_max, ingest_k, seed, &rep);
      for (const auto& s : rep.skipped) std::fprintf(stderr, "skipped %s\n", s.c_str());
      harness::WriteInstance(inst, out_dir);
      std::printf("ingested %zu users (%zu client users) into %s\n", inst.server_users.size(),
                  inst.client_ids.size(), out_dir.c_str());
      return 0;
    }
    if (setup->parsed()) {
      const auto inst = harness::ReadInstance(instance_dir);
      const auto kp = ReadKeyFile(client_key_path);
      Rng rng(seed);
      auto state = client::BuildIndicatorVector(inst.client_ids, inst.superset_size, kp, rng);
      server::ServerConfig cfg;
      cfg.min_client_users = setup_min_users;
      if (auto abort = server::VerifyIndicatorVector(state.vec, kp.pub, cfg)) {
        throw ProtocolAbort(*abort);
      }
      wire::IndicatorVectorMsg msg{kp.pub, 0, state.vec.declared_count,
                                   state.vec.combined_randomizer, wire::Values(state.vec.entries)};
      wire::WriteIndicatorFile(indicator_path, msg);
      std::printf("stored verified indicator vector (n=%zu, n_c=%llu) in %s\n",
                  state.vec.entries.size(),
                  static_cast<unsigned long long>(state.vec.declared_count),
                  indicator_path.c_str());
      return 0;
    }
    if (serve->parsed()) {
      const auto inst = harness::ReadInstance(instance_dir);
      std::optional<paillier::KeyPair> sk;
      if (!server_key_path.empty()) sk = ReadKeyFile(server_key_path);
      server::ServerParty party(inst.ServerData(), inst.facilities, serve_flags.Config(inst), sk,
                                seed);
      if (!indicator_path.empty()) InstallIndicatorFile(party, indicator_path);
      const auto [host, port] = ParseEndpoint(listen);
      net::TcpServer server(party, host, port);
      server.on_session_end = [&party](const session::ServerSession& s) {
        if (s.abort()) {
          std::fprintf(stderr, "session aborted: %s (%s)\n",
                       std::string(AbortCodeName(s.abort()->code)).c_str(),
                       s.abort()->detail.c_str());
        }
        if (party.config().epsilon) {
          std::printf("epsilon spent: %g\n", party.epsilon_spent());
          std::fflush(stdout);
        }
      };
      std::printf("listening on %s:%u\n", host.c_str(), server.port());
      std::fflush(stdout);
      server.Serve(max_sessions);
      return 0;
    }
    if (query->parsed()) {
      const auto inst = harness::ReadInstance(instance_dir);
      const Variant v = ParseVariant(variant);
      const QueryKind kind = ParseQueryKind(query_kind);
      Rng rng(seed);
      std::optional<paillier::KeyPair> ck;
      if (!client_key_path.empty()) {
        ck = ReadKeyFile(client_key_path);
      } else if (v == Variant::kClientBased) {
        ck = paillier::GenerateKeyPair(bits, rng);
      }
      client::ClientParty client(inst.ClientData(), ck);
      session::ClientSession cs(client, v, rng.Fork());
      if (candidates.empty()) {
        cs.EnqueueQuery(kind);
      } else {
        for (const auto& c : candidates) cs.EnqueueQuery(kind, ParseLocation(c));
      }
      if (!connect.empty()) {
        const auto [host, port] = ParseEndpoint(connect);
        auto stream = net::ConnectTcp(host, port);
        net::RunClientSession(cs, stream);
        return ReportClient(cs);
      }
      std::optional<paillier::KeyPair> sk;
      if (!server_key_path.empty()) {
        sk = ReadKeyFile(server_key_path);
      } else if (v == Variant::kServerBased) {
        sk = paillier::GenerateKeyPair(bits, rng);
      }
      server::ServerParty party(inst.ServerData(), inst.facilities, query_flags.Config(inst), sk,
                                seed + 1);
      if (!indicator_path.empty()) InstallIndicatorFile(party, indicator_path);
      session::ServerSession ss(party, party.ForkSessionRng());
      session::RunInProcess(ss, cs);
      const int rc = ReportClient(cs);
      if (party.config().epsilon) std::printf("epsilon spent: %g\n", party.epsilon_spent());
      return rc;
    }
    if (oracle_cmd->parsed()) {
      const auto inst = harness::ReadInstance(instance_dir);
      const QueryKind kind = ParseQueryKind(query_kind);
      std::vector<std::optional<Location>> cands;
      if (candidates.empty()) cands.push_back(std::nullopt);
      for (const auto& c : candidates) cands.push_back(ParseLocation(c));
      for (const auto& c : cands) {
        FacilitySet fs = c ? FacilitySet::WithCandidate(inst.facilities, *c)
                           : FacilitySet::Existing(inst.facilities);
        const auto plain = inst.Plain(fs, ParseMetric(oracle_metric));
        if (kind == QueryKind::kRnn) {
          std::printf("%s\n", QueryResult{RnnResult{oracle::ExactRnnq(plain)}, {}}.ToString().c_str());
        } else if (kind == QueryKind::kAvg) {
          const auto a = oracle::ExactAvgq(plain);
          std::printf("%s\n", QueryResult{AvgResult{a.total, a.count, a.average}, {}}.ToString().c_str());
        } else {
          const auto m = oracle::ExactMaxq(plain);
          std::printf("max=%s\n", m ? std::to_string(*m).c_str() : "no-result");
        }
      }
      return 0;
    }
    if (util->parsed()) {
      const auto inst = harness::ReadInstance(instance_dir);
      uopts.kind = ParseQueryKind(query_kind);
      uopts.epsilons = ParseEpsilons(eps_list);
      uopts.seed = seed;
      uopts.metric = ParseMetric(oracle_metric);
      uopts.backend = backend == "oracle" ? harness::UtilityBackend::kOracle
                                          : harness::UtilityBackend::kProtocol;
      const auto report = harness::EvaluateUtility(inst, uopts);
      for (const auto& s : report.series) {
        std::printf("epsilon=%g mean_rank_deviation=%.3f best_match=%zu/%u", s.epsilon,
                    s.mean_abs_deviation, s.best_match_trials, uopts.trials);
        if (uopts.kind == QueryKind::kMax) {
          std::printf(" w_or_w-1=%zu/%zu", s.max_top_answers, s.max_answers);
        }
        std::printf("\n");
      }
      if (!report_out.empty()) {
        std::ofstream out(report_out);
        report.WriteCsv(out);
      }
      return 0;
    }
    if (bench->parsed()) {
      const auto inst = harness::ReadInstance(instance_dir);
      bopts.variant = ParseVariant(variant);
      bopts.kind = ParseQueryKind(query_kind);
      bopts.seed = seed;
      bopts.metric = ParseMetric(oracle_metric);
      bopts.epsilon = bench_eps;
      const harness::BenchRow row = harness::RunBench(inst, bopts);
      if (report_out.empty()) {
        harness::WriteBenchCsv(std::cout, std::span(&row, 1));
      } else {
        std::ofstream out(report_out);
        harness::WriteBenchCsv(out, std::span(&row, 1));
      }
      return 0;
    }
  } catch (const ProtocolAbort& e) {
    std::fprintf(stderr, "ABORT(%s): %s\n", std::string(AbortCodeName(e.abort().code)).c_str(),
                 e.abort().detail.c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
