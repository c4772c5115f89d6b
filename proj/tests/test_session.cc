#include <gtest/gtest.h>

#include <thread>

#include "locagg/dp.h"
#include "locagg/net.h"
#include "locagg/session.h"
#include "test_support.h"

namespace locagg::session {
namespace {

using testing::WorkedExampleInstance;
using testing::TestKey;
using wire::Message;
using wire::MessageType;

struct Fixture {
  harness::Instance inst = WorkedExampleInstance();
  server::ServerParty server;
  client::ClientParty client;

  explicit Fixture(server::ServerConfig cfg, bool client_key = true, bool server_key = true)
      : server(inst.ServerData(), inst.facilities, cfg,
               server_key ? std::optional(TestKey(256, 1)) : std::nullopt, 11),
        client(inst.ClientData(),
               client_key ? std::optional(TestKey(256, 2)) : std::nullopt) {}
  Fixture() : Fixture(testing::LooseConfig(WorkedExampleInstance())) {}
};

std::vector<const TranscriptEntry*> Transfers(const Transcript& t) {
  std::vector<const TranscriptEntry*> out;
  for (const auto& e : t.entries()) {
    if (e.direction != Direction::kLocal && e.step > 0) out.push_back(&e);
  }
  return out;
}

TEST(Session, WorkedExampleRnnqClientBased) {
  Fixture f;
  ServerSession ss(f.server, Rng(1));
  ClientSession cs(f.client, Variant::kClientBased, Rng(2));
  cs.EnqueueQuery(QueryKind::kRnn);
  RunInProcess(ss, cs);
  ASSERT_FALSE(cs.abort());
  ASSERT_FALSE(ss.abort());
  EXPECT_TRUE(cs.finished());
  EXPECT_TRUE(ss.finished());
  ASSERT_EQ(cs.outcomes().size(), 1u);
  EXPECT_EQ(cs.outcomes()[0].result->ToString(), "q=(1,2)");
  // Setup uploads the vector once (step 0), then the query moves at steps 1 and 5.
  const auto transfers = Transfers(cs.transcript());
  ASSERT_EQ(transfers.size(), 2u);
  EXPECT_EQ(transfers[0]->step, 1);
  EXPECT_EQ(transfers[0]->type, MessageType::kQueryRequest);
  EXPECT_EQ(transfers[1]->step, 5);
  EXPECT_EQ(transfers[1]->values, 2u);
  EXPECT_EQ(cs.transcript().entries().back().type, MessageType::kDone);
}

TEST(Session, WorkedExampleRnnqServerBasedWithForcedMasks) {
  Fixture f;
  ServerSession ss(f.server, Rng(1));
  ClientSession cs(f.client, Variant::kServerBased, Rng(2));
  cs.set_forced_masks({15, 11});
  cs.EnqueueQuery(QueryKind::kRnn);
  RunInProcess(ss, cs);
  ASSERT_FALSE(cs.abort());
  EXPECT_EQ(ss.last_step8_plaintexts(), (std::vector<BigInt>{16, 13}));
  EXPECT_TRUE(ss.last_step8_noise().empty());
  EXPECT_EQ(cs.outcomes()[0].result->ToString(), "q=(1,2)");

  const auto transfers = Transfers(cs.transcript());
  ASSERT_EQ(transfers.size(), 4u);
  const std::vector<std::pair<int, MessageType>> expected{
      {1, MessageType::kQueryRequest}, {4, MessageType::kEncTable},
      {7, MessageType::kMasked}, {9, MessageType::kMaskedPlaintexts}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(transfers[i]->step, expected[i].first);
    EXPECT_EQ(transfers[i]->type, expected[i].second);
  }
  // n * k table ciphertexts at step 4.
  EXPECT_EQ(transfers[1]->values, 10u * 2u);
}

TEST(Session, ServerBasedMasksAreUniform) {
  Fixture f;
  std::set<BigInt> seen;
  for (int run = 0; run < 20; ++run) {
    ServerSession ss(f.server, Rng(100 + run));
    ClientSession cs(f.client, Variant::kServerBased, Rng(200 + run));
    cs.EnqueueQuery(QueryKind::kRnn);
    RunInProcess(ss, cs);
    ASSERT_EQ(cs.outcomes()[0].result->ToString(), "q=(1,2)");
    // The server sees result + mask mod m.
    for (const auto& v : ss.last_step8_plaintexts()) seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 40u);
}

TEST(Session, AllKindsBothVariantsOnWorkedExample) {
  for (Variant v : {Variant::kServerBased, Variant::kClientBased}) {
    Fixture f;
    ServerSession ss(f.server, Rng(3));
    ClientSession cs(f.client, v, Rng(4));
    cs.EnqueueQuery(QueryKind::kRnn);
    cs.EnqueueQuery(QueryKind::kAvg);
    cs.EnqueueQuery(QueryKind::kMax);
    cs.EnqueueQuery(QueryKind::kRnn, Location{30, 30});
    RunInProcess(ss, cs);
    ASSERT_FALSE(cs.abort());
    ASSERT_EQ(cs.outcomes().size(), 4u);
    EXPECT_EQ(cs.outcomes()[0].result->ToString(), "q=(1,2)");
    EXPECT_EQ(std::get<AvgResult>(cs.outcomes()[1].result->value).average, Rational::Of(7, 3));
    EXPECT_EQ(std::get<MaxResult>(cs.outcomes()[2].result->value).distance, 3);
    EXPECT_EQ(cs.outcomes()[3].result->ToString(), "q=(1,2,0)");
  }
}

TEST(Session, ClientBasedResultArity) {
  Fixture f;
  ServerSession ss(f.server, Rng(5));
  ClientSession cs(f.client, Variant::kClientBased, Rng(6));
  cs.EnqueueQuery(QueryKind::kRnn, Location{70, 70});
  cs.EnqueueQuery(QueryKind::kAvg);
  cs.EnqueueQuery(QueryKind::kMax);
  RunInProcess(ss, cs);
  ASSERT_FALSE(cs.abort());
  std::vector<std::size_t> counts;
  for (const auto& e : cs.transcript().entries()) {
    if (e.type == MessageType::kEncResult) counts.push_back(e.values);
  }
  const auto w = std::get<MaxResult>(cs.outcomes()[2].result->value).w;
  EXPECT_EQ(counts, (std::vector<std::size_t>{3, 2, static_cast<std::size_t>(w + 1)}));
}

TEST(Session, StoredVectorSkipsUpload) {
  Fixture f;
  for (int round = 0; round < 2; ++round) {
    ServerSession ss(f.server, Rng(7 + round));
    ClientSession cs(f.client, Variant::kClientBased, Rng(9 + round));
    cs.EnqueueQuery(QueryKind::kRnn);
    RunInProcess(ss, cs);
    std::size_t uploads = 0;
    for (const auto& e : cs.transcript().entries()) {
      if (e.type == MessageType::kIndicatorVector) ++uploads;
    }
    EXPECT_EQ(uploads, round == 0 ? 1u : 0u);
    EXPECT_EQ(cs.outcomes()[0].result->ToString(), "q=(1,2)");
  }
}

TEST(Session, IndicatorUpdateThroughSession) {
  Fixture f;
  ServerSession ss(f.server, Rng(11));
  ClientSession cs(f.client, Variant::kClientBased, Rng(12));
  cs.EnqueueQuery(QueryKind::kRnn);
  cs.EnqueueIndicatorUpdate({1, 6}, 0, 7);  // 1 leaves, 6 joins
  cs.EnqueueQuery(QueryKind::kRnn);
  RunInProcess(ss, cs);
  ASSERT_FALSE(cs.abort());
  ASSERT_EQ(cs.outcomes().size(), 2u);
  EXPECT_EQ(cs.outcomes()[0].result->ToString(), "q=(1,2)");
  EXPECT_EQ(cs.outcomes()[1].result->ToString(), "q=(1,2)");
  std::size_t window_values = 0;
  for (const auto& e : cs.transcript().entries()) {
    if (e.type == MessageType::kIndicatorVector) window_values = e.values;
  }
  EXPECT_EQ(window_values, 7u);
}

TEST(Session, TooFewClientUsers) {
  auto cfg = testing::LooseConfig(WorkedExampleInstance());
  cfg.min_client_users = 5;
  Fixture f(cfg);
  ServerSession ss(f.server, Rng(13));
  ClientSession cs(f.client, Variant::kClientBased, Rng(14));
  cs.EnqueueQuery(QueryKind::kRnn);
  RunInProcess(ss, cs);
  ASSERT_TRUE(ss.abort());
  EXPECT_EQ(ss.abort()->code, AbortCode::kTooFewUsers);
  ASSERT_TRUE(cs.abort());
  EXPECT_EQ(cs.abort()->code, AbortCode::kTooFewUsers);
}

TEST(Session, TooManyFacilitiesAbortsAtStep2) {
  harness::Instance inst = WorkedExampleInstance();
  inst.facilities.clear();
  for (int i = 0; i < 20; ++i) inst.facilities.push_back({i + 1, 50});
  auto cfg = testing::LooseConfig(inst);
  cfg.theta1 = 5;
  for (Variant v : {Variant::kServerBased, Variant::kClientBased}) {
    server::ServerParty sp(inst.ServerData(), inst.facilities, cfg, TestKey(256, 1), 1);
    client::ClientParty cp(inst.ClientData(), TestKey(256, 2));
    ServerSession ss(sp, Rng(15));
    ClientSession cs(cp, v, Rng(16));
    FacilitySet fs = FacilitySet::Existing(inst.facilities);
    for (int i = 0; i < 6; ++i) fs.facilities.push_back({60 + i, 60});
    cs.EnqueueQuery(QueryKind::kRnn, fs);
    RunInProcess(ss, cs);
    ASSERT_TRUE(ss.abort());
    EXPECT_EQ(ss.abort()->code, AbortCode::kTooManyFacilities);
    EXPECT_EQ(ss.step(), 2);
    ASSERT_TRUE(cs.abort());
    EXPECT_EQ(cs.abort()->code, AbortCode::kTooManyFacilities);
    EXPECT_TRUE(cs.outcomes().empty());
  }
}

wire::SessionId Sid() {
  wire::SessionId s{};
  s.fill(7);
  return s;
}

TEST(Session, StaleIndicatorVectorMidQuery) {
  Fixture f;
  ServerSession ss(f.server, Rng(17));
  auto out = ss.Advance({MessageType::kHello, Sid(), wire::Encode(wire::Hello{1, Variant::kServerBased})});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].type, MessageType::kSetupParams);
  const wire::QueryRequest q{QueryKind::kRnn, 2, f.inst.facilities};
  out = ss.Advance({MessageType::kQueryRequest, Sid(), wire::Encode(q)});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].type, MessageType::kEncTable);

  Rng rng(18);
  const auto& kp = TestKey(256, 2);
  const auto state = client::BuildIndicatorVector(f.inst.client_ids, 10, kp, rng);
  const wire::IndicatorVectorMsg stale{kp.pub, 0, state.vec.declared_count,
                                       state.vec.combined_randomizer, wire::Values(state.vec.entries)};
  out = ss.Advance({MessageType::kIndicatorVector, Sid(), wire::Encode(stale)});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].type, MessageType::kAbort);
  EXPECT_EQ(wire::DecodeAbort(out[0].payload).code, AbortCode::kStepViolation);
  ASSERT_TRUE(ss.abort());
  EXPECT_EQ(ss.abort()->code, AbortCode::kStepViolation);
  EXPECT_TRUE(ss.Advance({MessageType::kDone, Sid(), {}}).empty());
}

TEST(Session, OutOfOrderAndForeignFrames) {
  Fixture f;
  {
    ServerSession ss(f.server, Rng(19));
    auto out = ss.Advance({MessageType::kMasked, Sid(), wire::Encode(wire::ValueList{})});
    ASSERT_TRUE(ss.abort());
    EXPECT_EQ(ss.abort()->code, AbortCode::kStepViolation);
  }
  {
    ServerSession ss(f.server, Rng(20));
    ss.Advance({MessageType::kHello, Sid(), wire::Encode(wire::Hello{1, Variant::kClientBased})});
    wire::SessionId other = Sid();
    other[0] ^= 1;
    ss.Advance({MessageType::kDone, other, {}});
    ASSERT_TRUE(ss.abort());
    EXPECT_EQ(ss.abort()->code, AbortCode::kSessionMismatch);
  }
  {
    ServerSession ss(f.server, Rng(21));
    ss.Advance({MessageType::kHello, Sid(), wire::Encode(wire::Hello{1, Variant::kClientBased})});
    ss.Advance({MessageType::kQueryRequest, Sid(), Bytes{1, 2, 3}});
    ASSERT_TRUE(ss.abort());
    EXPECT_EQ(ss.abort()->code, AbortCode::kMalformed);
  }
  {
    // Client-based query before any indicator vector.
    ServerSession ss(f.server, Rng(22));
    ss.Advance({MessageType::kHello, Sid(), wire::Encode(wire::Hello{1, Variant::kClientBased})});
    ss.Advance({MessageType::kQueryRequest, Sid(),
                wire::Encode(wire::QueryRequest{QueryKind::kRnn, 2, f.inst.facilities})});
    ASSERT_TRUE(ss.abort());
    EXPECT_EQ(ss.abort()->code, AbortCode::kNotSetUp);
  }
  {
    // Server-based masked values of the wrong arity.
    ServerSession ss(f.server, Rng(23));
    ss.Advance({MessageType::kHello, Sid(), wire::Encode(wire::Hello{1, Variant::kServerBased})});
    ss.Advance({MessageType::kQueryRequest, Sid(),
                wire::Encode(wire::QueryRequest{QueryKind::kRnn, 2, f.inst.facilities})});
    ss.Advance({MessageType::kMasked, Sid(), wire::Encode(wire::ValueList{{1}})});
    ASSERT_TRUE(ss.abort());
    EXPECT_EQ(ss.abort()->code, AbortCode::kMalformed);
  }
}

TEST(Session, ServerWithoutKeyRejectsServerBased) {
  Fixture f(testing::LooseConfig(WorkedExampleInstance()), true, false);
  ServerSession ss(f.server, Rng(24));
  ClientSession cs(f.client, Variant::kServerBased, Rng(25));
  cs.EnqueueQuery(QueryKind::kRnn);
  RunInProcess(ss, cs);
  ASSERT_TRUE(cs.abort());
  EXPECT_EQ(cs.abort()->code, AbortCode::kNotSetUp);
}

TEST(Session, DifferentialPrivacyAnnotatedAndReplayable) {
  auto cfg = testing::LooseConfig(WorkedExampleInstance());
  cfg.epsilon = dp::kEpsilonLn2;
  Fixture f(cfg);
  Rng replay(server::ServerParty::NoiseSeedFor(11));
  {
    ServerSession ss(f.server, Rng(26));
    ClientSession cs(f.client, Variant::kClientBased, Rng(27));
    cs.EnqueueQuery(QueryKind::kRnn);
    RunInProcess(ss, cs);
    const auto& res = *cs.outcomes()[0].result;
    EXPECT_EQ(res.dp_epsilon, dp::kEpsilonLn2);
    const auto noise = server::DrawNoise(QueryKind::kRnn, 2, 0, cfg.epsilon, replay);
    EXPECT_EQ(std::get<RnnResult>(res.value).counts,
              (std::vector<std::int64_t>{1 + noise[0], 2 + noise[1]}));
  }
  {
    ServerSession ss(f.server, Rng(28));
    ClientSession cs(f.client, Variant::kServerBased, Rng(29));
    cs.EnqueueQuery(QueryKind::kRnn);
    RunInProcess(ss, cs);
    const auto noise = server::DrawNoise(QueryKind::kRnn, 2, 0, cfg.epsilon, replay);
    EXPECT_EQ(ss.last_step8_noise(), noise);
    EXPECT_EQ(std::get<RnnResult>(cs.outcomes()[0].result->value).counts,
              (std::vector<std::int64_t>{1 + noise[0], 2 + noise[1]}));
  }
}

TEST(Net, TcpLoopbackConcurrentSessions) {
  Fixture f;
  net::TcpServer server(f.server, "127.0.0.1", 0);
  std::atomic<int> ended{0};
  server.on_session_end = [&](const ServerSession&) { ++ended; };
  std::thread serving([&] { server.Serve(6); });

  std::vector<std::thread> clients;
  std::vector<std::string> results(6);
  // The first session stores the indicator vector; the rest reuse it.
  {
    ClientSession cs(f.client, Variant::kClientBased, Rng(30));
    cs.EnqueueQuery(QueryKind::kRnn);
    auto stream = net::ConnectTcp("127.0.0.1", server.port());
    net::RunClientSession(cs, stream);
    results[0] = cs.outcomes().at(0).result->ToString();
  }
  for (int i = 1; i < 6; ++i) {
    clients.emplace_back([&, i] {
      client::ClientParty cp(f.inst.ClientData(), TestKey(256, 2));
      ClientSession cs(cp, i % 2 ? Variant::kServerBased : Variant::kClientBased, Rng(30 + i));
      cs.EnqueueQuery(QueryKind::kRnn);
      auto stream = net::ConnectTcp("127.0.0.1", server.port());
      const auto stats = net::RunClientSession(cs, stream);
      if (!cs.outcomes().empty() && cs.outcomes()[0].result) {
        results[i] = cs.outcomes()[0].result->ToString();
      }
      EXPECT_GT(stats.bytes_sent, 0u);
    });
  }
  for (auto& t : clients) t.join();
  serving.join();
  for (const auto& r : results) EXPECT_EQ(r, "q=(1,2)");
  EXPECT_EQ(ended.load(), 6);
}

TEST(Net, DroppedConnectionAbortsServerSession) {
  Fixture f;
  net::TcpServer server(f.server, "127.0.0.1", 0);
  std::optional<Abort> seen;
  std::mutex mu;
  server.on_session_end = [&](const ServerSession& s) {
    std::lock_guard lock(mu);
    seen = s.abort();
  };
  std::thread serving([&] { server.Serve(1); });
  {
    auto stream = net::ConnectTcp("127.0.0.1", server.port());
    net::WriteMessage(stream, {MessageType::kHello, Sid(), wire::Encode(wire::Hello{1, Variant::kServerBased})});
    ASSERT_TRUE(net::ReadMessage(stream));
    const std::array<std::uint8_t, 6> partial{0, 0, 0, 40, 4, 7};
    stream.WriteAll(partial);
  }
  serving.join();
  std::lock_guard lock(mu);
  ASSERT_TRUE(seen);
  EXPECT_EQ(seen->code, AbortCode::kMalformed);
}

}  // namespace
}  // namespace locagg::session
