#include <gtest/gtest.h>

#include "locagg/client_party.h"
#include "locagg/dp.h"
#include "locagg/server_party.h"
#include "test_support.h"

namespace locagg::server {
namespace {

using paillier::Decrypt;
using paillier::Encrypt;
using testing::WorkedExampleInstance;
using testing::TestKey;
using testing::TinyKey;

std::vector<Location> Grid(int count) {
  std::vector<Location> out;
  for (int i = 0; i < count; ++i) out.push_back({i + 1, 1});
  return out;
}

TEST(ValidateFacilities, ThresholdRules) {
  ServerConfig cfg;
  cfg.theta1 = 5;
  cfg.theta2 = 3;
  const auto known = Grid(20);

  auto fs = FacilitySet::Existing(known);
  EXPECT_FALSE(ValidateFacilities(fs, known, cfg));

  // 26 facilities: one over k + theta1.
  for (int i = 0; i < 6; ++i) fs.facilities.push_back({100 + i, 5});
  auto abort = ValidateFacilities(fs, known, cfg);
  ASSERT_TRUE(abort);
  EXPECT_EQ(abort->code, AbortCode::kTooManyFacilities);
  fs.facilities.pop_back();
  EXPECT_FALSE(ValidateFacilities(fs, known, cfg));

  // 18 existing ones: within theta2.
  FacilitySet fewer{{known.begin(), known.begin() + 18}, 18};
  EXPECT_FALSE(ValidateFacilities(fewer, known, cfg));
  FacilitySet too_few{{known.begin(), known.begin() + 16}, 16};
  abort = ValidateFacilities(too_few, known, cfg);
  ASSERT_TRUE(abort);
  EXPECT_EQ(abort->code, AbortCode::kTooFewFacilities);

  // 20 facilities, only 16 of them existing.
  FacilitySet swapped{{known.begin(), known.begin() + 16}, 16};
  for (int i = 0; i < 4; ++i) swapped.facilities.push_back({200 + i, 7});
  abort = ValidateFacilities(swapped, known, cfg);
  ASSERT_TRUE(abort);
  EXPECT_EQ(abort->code, AbortCode::kMissingExisting);
  swapped.facilities[16] = known[16];
  EXPECT_FALSE(ValidateFacilities(swapped, known, cfg));

  FacilitySet outside = FacilitySet::WithCandidate(known, {0, 3});
  abort = ValidateFacilities(outside, known, cfg);
  ASSERT_TRUE(abort);
  EXPECT_EQ(abort->code, AbortCode::kInvalidFacility);
}

TEST(ValidateFacilities, Pure) {
  ServerConfig cfg;
  const auto known = Grid(3);
  const auto fs = FacilitySet::WithCandidate(known, {9, 9});
  const auto a = ValidateFacilities(fs, known, cfg);
  const auto b = ValidateFacilities(fs, known, cfg);
  EXPECT_EQ(a.has_value(), b.has_value());
}

// Decrypts a whole matrix.
std::vector<std::vector<BigInt>> Open(const paillier::KeyPair& kp, const EncryptedMatrix& m) {
  std::vector<std::vector<BigInt>> out;
  for (const auto& row : m) {
    auto& o = out.emplace_back();
    for (const auto& c : row) o.push_back(Decrypt(kp, c));
  }
  return out;
}

TEST(Tables, WorkedExampleRnnq) {
  const auto inst = WorkedExampleInstance();
  const auto& kp = TestKey(256);
  Rng rng(1);
  const auto data = inst.ServerData();
  const auto state = AssignUsers(data, inst.facilities, Metric::kEuclidean);
  TableEncryptor enc(kp, rng);
  const auto rows = Open(kp, BuildRnnqTable(data, state, 2, enc));
  ASSERT_EQ(rows.size(), 2u);
  ASSERT_EQ(rows[0].size(), 10u);
  const std::vector<BigInt> f1{0, 1, 0, 0, 0, 0, 1, 0, 0, 1};
  const std::vector<BigInt> f2{0, 0, 0, 1, 0, 1, 0, 1, 0, 0};
  EXPECT_EQ(rows[0], f1);
  EXPECT_EQ(rows[1], f2);
  EXPECT_EQ(enc.fresh_encryptions(), 20u);
}

TEST(Tables, RandomInstancesMatchOracle) {
  const auto& kp = TestKey(256);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = testing::RandomInstance(rng, {.max_n = 60, .max_ns = 40, .max_nc = 30, .max_k = 5});
    const auto data = inst.ServerData();
    const auto state = AssignUsers(data, inst.facilities, Metric::kEuclidean);
    TableEncryptor enc(kp, rng);
    const auto rnn = Open(kp, BuildRnnqTable(data, state, inst.facilities.size(), enc));
    const auto avg = Open(kp, BuildAvgqTable(data, state, enc));
    const auto max = BuildMaxqTable(data, state, enc, rng, 2.0);
    const auto buckets = Open(kp, max.rows);
    ASSERT_EQ(static_cast<std::int64_t>(buckets.size()), max.w + 1);
    ASSERT_GE(max.w, state.max_distance + 1);

    std::vector<std::int64_t> per_facility(inst.facilities.size(), 0);
    std::vector<std::int64_t> histogram(max.w + 1, 0);
    std::vector<BigInt> dist_row(inst.superset_size, 0), member_row(inst.superset_size, 0);
    for (const auto& u : inst.server_users) {
      const auto a = AssignNearest(u.location, inst.facilities, Metric::kEuclidean);
      ++per_facility[a.nearest_index];
      ++histogram[a.distance];
      dist_row[u.id] = a.distance;
      member_row[u.id] = 1;
    }
    for (std::size_t j = 0; j < rnn.size(); ++j) {
      BigInt sum = 0;
      for (const auto& v : rnn[j]) sum += v;
      ASSERT_EQ(sum, per_facility[j]);
    }
    for (std::uint64_t i = 0; i < inst.superset_size; ++i) {
      BigInt column = 0;
      for (const auto& row : rnn) column += row[i];
      ASSERT_LE(column, 1);
    }
    ASSERT_EQ(avg[0], dist_row);
    ASSERT_EQ(avg[1], member_row);
    for (std::int64_t j = 0; j <= max.w; ++j) {
      BigInt sum = 0;
      for (const auto& v : buckets[j]) sum += v;
      ASSERT_EQ(sum, histogram[j]);
    }
  }
}

TEST(Tables, DrawWRange) {
  Rng rng(3);
  for (std::int64_t max : {0, 1, 2, 5, 100}) {
    for (int i = 0; i < 200; ++i) {
      const auto w = DrawW(max, 2.0, rng);
      ASSERT_GE(w, max + 1);
      ASSERT_LE(w, std::max<std::int64_t>(max + 1, 2 * max));
    }
  }
}

TEST(Tables, PoolEntriesUsedOnce) {
  const auto& kp = TestKey(256);
  Rng rng(4);
  EncryptionPool pool;
  pool.Fill(kp, 5, 5, rng);
  TableEncryptor enc(kp, rng, &pool);
  std::set<BigInt> seen;
  for (int i = 0; i < 8; ++i) {
    const auto z = enc.Zero();
    const auto o = enc.One();
    EXPECT_EQ(Decrypt(kp, z), 0);
    EXPECT_EQ(Decrypt(kp, o), 1);
    EXPECT_TRUE(seen.insert(z.value).second);
    EXPECT_TRUE(seen.insert(o.value).second);
  }
  EXPECT_EQ(pool.zeros_left(), 0u);
  EXPECT_EQ(enc.fresh_encryptions(), 6u);
}

TEST(DecryptMasked, WorkedExampleMasks) {
  const auto& kp = TestKey(256);
  Rng rng(5);
  const std::vector<paillier::Ciphertext> masked{
      paillier::Add(kp.pub, Encrypt(kp.pub, 1, rng), Encrypt(kp.pub, 15, rng)),
      paillier::Add(kp.pub, Encrypt(kp.pub, 2, rng), Encrypt(kp.pub, 11, rng))};
  EXPECT_EQ(DecryptMasked(kp, masked), (std::vector<BigInt>{16, 13}));
  const std::vector<paillier::Ciphertext> raw{Encrypt(kp.pub, 9, rng)};
  EXPECT_EQ(DecryptMasked(kp, raw), (std::vector<BigInt>{9}));
}

TEST(DecryptMasked, NoiseReplay) {
  const auto& kp = TestKey(256);
  Rng rng(6);
  std::vector<paillier::Ciphertext> masked;
  for (int v : {16, 13, 0}) masked.push_back(Encrypt(kp.pub, v, rng));
  Rng noise_rng(77), replay(77);
  const auto noise = DrawNoise(QueryKind::kRnn, 3, 0, dp::kEpsilonLn2, noise_rng);
  const auto out = DecryptMasked(kp, masked, noise);
  const dp::NoiseSpec spec(dp::kEpsilonLn2, 2);
  const std::vector<BigInt> plain{16, 13, 0};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto n = dp::LaplaceSample(spec, replay);
    EXPECT_EQ(noise[i], n);
    BigInt expected = (plain[i] + n) % kp.pub.m;
    if (expected < 0) expected += kp.pub.m;
    EXPECT_EQ(out[i], expected);
  }
}

TEST(DrawNoise, ShapesAndScales) {
  Rng rng(7);
  EXPECT_TRUE(DrawNoise(QueryKind::kRnn, 4, 10, std::nullopt, rng).empty());
  EXPECT_EQ(DrawNoise(QueryKind::kMax, 6, 10, 0.1, rng).size(), 6u);
  // AVG: total uses max distance, count uses 1; max = 0 leaves the total exact.
  Rng a(8), b(8);
  const auto avg = DrawNoise(QueryKind::kAvg, 2, 0, 0.1, a);
  ASSERT_EQ(avg.size(), 2u);
  EXPECT_EQ(avg[0], 0);
  EXPECT_EQ(avg[1], dp::LaplaceSample(dp::NoiseSpec(0.1, 1), b));
  Rng c(9), d(9);
  const auto avg2 = DrawNoise(QueryKind::kAvg, 2, 50, 0.1, c);
  EXPECT_EQ(avg2[0], dp::LaplaceSample(dp::NoiseSpec(0.1, 50), d));
  EXPECT_EQ(avg2[1], dp::LaplaceSample(dp::NoiseSpec(0.1, 1), d));
}

// The client's indicator vector for an instance.
client::ClientIndicatorState Indicator(const harness::Instance& inst, const paillier::KeyPair& kp,
                                       Rng& rng) {
  auto state = client::BuildIndicatorVector(inst.client_ids, inst.superset_size, kp, rng);
  ServerConfig cfg;
  cfg.min_client_users = 1;
  VerifyIndicatorVector(state.vec, kp.pub, cfg);
  return state;
}

TEST(VerifyIndicator, HonestAccepted) {
  const auto& kp = TestKey(256);
  Rng rng(10);
  auto state = Indicator(WorkedExampleInstance(), kp, rng);
  ServerConfig cfg;
  cfg.min_client_users = 4;
  EXPECT_FALSE(VerifyIndicatorVector(state.vec, kp.pub, cfg));
  EXPECT_TRUE(state.vec.verified);
  cfg.min_client_users = 5;
  auto abort = VerifyIndicatorVector(state.vec, kp.pub, cfg);
  ASSERT_TRUE(abort);
  EXPECT_EQ(abort->code, AbortCode::kTooFewUsers);
  EXPECT_FALSE(state.vec.verified);
}

TEST(VerifyIndicator, EmptyClientBelowThreshold) {
  const auto& kp = TestKey(256);
  Rng rng(11);
  auto state = client::BuildIndicatorVector({}, 10, kp, rng);
  EXPECT_EQ(state.vec.declared_count, 0u);
  ServerConfig cfg;
  cfg.min_client_users = 1;
  auto abort = VerifyIndicatorVector(state.vec, kp.pub, cfg);
  ASSERT_TRUE(abort);
  EXPECT_EQ(abort->code, AbortCode::kTooFewUsers);
}

TEST(VerifyIndicator, EveryMutationRejected) {
  const auto& kp = TestKey(256);
  const auto& other = TestKey(256, 1);
  Rng rng(12);
  const auto honest = Indicator(WorkedExampleInstance(), kp, rng);
  ServerConfig cfg;
  cfg.min_client_users = 1;

  std::vector<EncryptedIndicatorVector> mutants;
  for (std::size_t i = 0; i < honest.vec.entries.size(); ++i) {
    auto m = honest.vec;
    m.entries[i] = paillier::Rerandomize(kp.pub, m.entries[i], rng);
    mutants.push_back(m);
    m = honest.vec;
    m.entries[i] = Encrypt(kp.pub, honest.membership[i] ? 0 : 1, rng);
    mutants.push_back(m);
    m = honest.vec;
    m.entries[i] = Encrypt(kp.pub, 2, rng);
    mutants.push_back(m);
    m = honest.vec;
    m.entries[i] = Encrypt(other.pub, honest.membership[i] ? 1 : 0, rng);
    mutants.push_back(m);
    m = honest.vec;
    m.entries[i].value = 0;
    mutants.push_back(m);
    m = honest.vec;
    m.entries[i].value = kp.pub.m_sq;
    mutants.push_back(m);
  }
  for (std::int64_t delta : {-2, -1, 1, 2, 100}) {
    auto m = honest.vec;
    m.declared_count = static_cast<std::uint64_t>(static_cast<std::int64_t>(m.declared_count) + delta);
    mutants.push_back(m);
  }
  const std::vector<BigInt> bad_r{BigInt(honest.vec.combined_randomizer + 1), BigInt(0), kp.pub.m,
                                  BigInt(honest.vec.combined_randomizer * 2 % kp.pub.m)};
  for (const BigInt& r : bad_r) {
    auto m = honest.vec;
    m.combined_randomizer = r;
    mutants.push_back(m);
  }
  {
    // Swapping two entries keeps the product: the check is about counts only.
    auto m = honest.vec;
    std::swap(m.entries[0], m.entries[1]);
    auto copy = m;
    EXPECT_FALSE(VerifyIndicatorVector(copy, kp.pub, cfg));
  }
  std::size_t rejected = 0;
  for (auto& m : mutants) {
    auto abort = VerifyIndicatorVector(m, kp.pub, cfg);
    if (abort && abort->code == AbortCode::kVerificationFailed && !m.verified) ++rejected;
  }
  EXPECT_EQ(rejected, mutants.size());
}

TEST(Aggregates, WorkedExample) {
  const auto inst = WorkedExampleInstance();
  const auto& kp = TestKey(256);
  Rng rng(13);
  const auto state = Indicator(inst, kp, rng);
  const auto cache = PrecomputeAggregates(inst.ServerData(), state.vec, kp.pub, inst.facilities,
                                          Metric::kEuclidean);
  ASSERT_EQ(cache.rnn.size(), 2u);
  auto open = [&](const BigInt& v) { return Decrypt(kp, {v, kp.pub.id}); };
  EXPECT_EQ(open(cache.rnn[0]), 1);
  EXPECT_EQ(open(cache.rnn[1]), 2);
  EXPECT_EQ(open(cache.count), 3);
  EXPECT_EQ(open(cache.total), 7);
}

TEST(Aggregates, EmptyServerSide) {
  auto inst = WorkedExampleInstance();
  inst.server_users.clear();
  const auto& kp = TestKey(256);
  Rng rng(14);
  const auto state = Indicator(inst, kp, rng);
  const auto cache = PrecomputeAggregates(inst.ServerData(), state.vec, kp.pub, inst.facilities,
                                          Metric::kEuclidean);
  auto open = [&](const BigInt& v) { return Decrypt(kp, {v, kp.pub.id}); };
  for (const auto& v : cache.rnn) EXPECT_EQ(open(v), 0);
  EXPECT_EQ(open(cache.total), 0);
  EXPECT_EQ(open(cache.count), 0);
  for (const auto& v : cache.buckets) EXPECT_EQ(open(v), 0);
}

TEST(Aggregates, IncrementalEqualsFromScratch) {
  const auto& kp = TestKey(256);
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = testing::RandomInstance(rng, {.max_n = 300, .max_ns = 150, .max_nc = 150, .max_k = 6});
    const auto state = Indicator(inst, kp, rng);
    const auto data = inst.ServerData();
    for (Metric metric : {Metric::kEuclidean, Metric::kL1}) {
      const auto cache = PrecomputeAggregates(data, state.vec, kp.pub, inst.facilities, metric);
      for (int q = 0; q < 5; ++q) {
        const Location cand{static_cast<std::int32_t>(rng.UniformInt(1, inst.max_coordinate)),
                            static_cast<std::int32_t>(rng.UniformInt(1, inst.max_coordinate))};
        const auto fs = FacilitySet::WithCandidate(inst.facilities, cand);
        const auto inc = AggregatesForQuery(cache, data, state.vec, kp.pub, fs, metric);
        const auto full = AggregatesFromScratch(data, state.vec, kp.pub, fs.facilities, metric);
        ASSERT_TRUE(inc.incremental);
        ASSERT_EQ(inc.rnn, full.rnn);
        ASSERT_EQ(inc.total, full.total);
        ASSERT_EQ(inc.count, full.count);
        ASSERT_EQ(inc.buckets, full.buckets);
        ASSERT_EQ(inc.bucket_population, full.bucket_population);
        ASSERT_EQ(inc.max_distance, full.max_distance);
      }
      const auto base = AggregatesForQuery(cache, data, state.vec, kp.pub,
                                           FacilitySet::Existing(inst.facilities), metric);
      EXPECT_EQ(base.reassigned_users, 0u);
      EXPECT_EQ(base.rnn, cache.rnn);
    }
  }
}

TEST(Aggregates, FarCandidateChangesNothing) {
  auto inst = WorkedExampleInstance();
  const auto& kp = TestKey(256);
  Rng rng(16);
  const auto state = Indicator(inst, kp, rng);
  const auto data = inst.ServerData();
  const auto cache = PrecomputeAggregates(data, state.vec, kp.pub, inst.facilities, Metric::kEuclidean);
  const auto agg = AggregatesForQuery(cache, data, state.vec, kp.pub,
                                      FacilitySet::WithCandidate(inst.facilities, {100, 100}),
                                      Metric::kEuclidean);
  Rng noise(1);
  const auto cts = RnnqClientAnswer(agg, kp.pub, std::nullopt, rng, noise);
  ASSERT_EQ(cts.size(), 3u);
  EXPECT_EQ(Decrypt(kp, cts[0]), 1);
  EXPECT_EQ(Decrypt(kp, cts[1]), 2);
  EXPECT_EQ(Decrypt(kp, cts[2]), 0);
  EXPECT_EQ(agg.reassigned_users, 0u);
}

TEST(Answers, MatchOracle) {
  const auto& kp = TestKey(256);
  Rng rng(17), noise(1);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = testing::RandomInstance(rng, {.max_n = 200, .max_ns = 100, .max_nc = 100, .max_k = 5});
    const auto state = Indicator(inst, kp, rng);
    const auto data = inst.ServerData();
    const auto cache = PrecomputeAggregates(data, state.vec, kp.pub, inst.facilities, Metric::kEuclidean);
    const Location cand{static_cast<std::int32_t>(rng.UniformInt(1, inst.max_coordinate)),
                        static_cast<std::int32_t>(rng.UniformInt(1, inst.max_coordinate))};
    const auto fs = FacilitySet::WithCandidate(inst.facilities, cand);
    const auto agg = AggregatesForQuery(cache, data, state.vec, kp.pub, fs, Metric::kEuclidean);
    const auto plain = inst.Plain(fs, Metric::kEuclidean);

    const auto rnn = RnnqClientAnswer(agg, kp.pub, std::nullopt, rng, noise);
    const auto expected = oracle::ExactRnnq(plain);
    ASSERT_EQ(rnn.size(), expected.size());
    for (std::size_t j = 0; j < rnn.size(); ++j) ASSERT_EQ(Decrypt(kp, rnn[j]), expected[j]);

    const auto avg = AvgqClientAnswer(agg, kp.pub, std::nullopt, rng, noise);
    const auto exact = oracle::ExactAvgq(plain);
    ASSERT_EQ(Decrypt(kp, avg[0]), exact.total);
    ASSERT_EQ(Decrypt(kp, avg[1]), exact.count);

    const auto max = MaxqClientAnswer(agg, kp.pub, std::nullopt, 2.0, rng, noise);
    ASSERT_EQ(static_cast<std::int64_t>(max.buckets.size()), max.w + 1);
    std::optional<std::int64_t> top;
    for (std::int64_t j = 0; j <= max.w; ++j) {
      if (Decrypt(kp, max.buckets[j]) != 0) top = j;
    }
    ASSERT_EQ(top, oracle::ExactMaxq(plain));
  }
}

TEST(Answers, RerandomizedOutputs) {
  const auto inst = WorkedExampleInstance();
  const auto& kp = TestKey(256);
  Rng rng(18), noise(1);
  const auto state = Indicator(inst, kp, rng);
  const auto data = inst.ServerData();
  const auto cache = PrecomputeAggregates(data, state.vec, kp.pub, inst.facilities, Metric::kEuclidean);
  const auto agg = AggregatesForQuery(cache, data, state.vec, kp.pub,
                                      FacilitySet::Existing(inst.facilities), Metric::kEuclidean);
  const auto a = RnnqClientAnswer(agg, kp.pub, std::nullopt, rng, noise);
  const auto b = RnnqClientAnswer(agg, kp.pub, std::nullopt, rng, noise);
  EXPECT_NE(a[0].value, agg.rnn[0]);
  EXPECT_NE(a[0].value, b[0].value);
}

TEST(Answers, MaxqBucketsAtDistances) {
  // Common users at distances {2, 5, 5} from the single facility.
  harness::Instance inst;
  inst.superset_size = 5;
  inst.max_coordinate = 100;
  inst.server_users = {{0, {12, 10}}, {1, {15, 10}}, {2, {10, 15}}, {3, {10, 40}}};
  inst.client_ids = {0, 1, 2, 4};
  inst.facilities = {{10, 10}};
  const auto& kp = TestKey(256);
  Rng rng(19), noise(1);
  const auto state = Indicator(inst, kp, rng);
  const auto agg = AggregatesFromScratch(inst.ServerData(), state.vec, kp.pub, inst.facilities,
                                         Metric::kEuclidean);
  const auto max = MaxqClientAnswer(agg, kp.pub, std::nullopt, 2.0, rng, noise);
  EXPECT_GE(max.w, 31);
  for (std::int64_t j = 0; j <= max.w; ++j) {
    const bool nonzero = Decrypt(kp, max.buckets[j]) != 0;
    EXPECT_EQ(nonzero, j == 2 || j == 5) << j;
  }
}

TEST(Answers, MaxqZeroPreservationTinyKey) {
  const auto& kp = TinyKey();
  Rng rng(20), noise(1);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    // Bucket counts stay below p = 5 so they are nonzero mod 35.
    const auto inst = testing::RandomInstance(rng, {.max_n = 8, .max_ns = 4, .max_nc = 8, .max_k = 2, .max_coordinate = 6});
    const auto state = Indicator(inst, kp, rng);
    const auto agg = AggregatesFromScratch(inst.ServerData(), state.vec, kp.pub, inst.facilities,
                                           Metric::kEuclidean);
    const auto max = MaxqClientAnswer(agg, kp.pub, std::nullopt, 2.0, rng, noise);
    for (std::size_t j = 0; j < max.buckets.size(); ++j) {
      const BigInt raw = j < agg.buckets.size() ? Decrypt(kp, {agg.buckets[j], kp.pub.id}) : BigInt(0);
      ASSERT_EQ(Decrypt(kp, max.buckets[j]) != 0, raw != 0);
      BigInt g;
      mpz_gcd(g.get_mpz_t(), max.exponents[j].get_mpz_t(), kp.pub.m.get_mpz_t());
      ASSERT_EQ(g, 1);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(ServerParty, InstallChecksAndWindowUpdates) {
  const auto inst = WorkedExampleInstance();
  const auto& kp = TestKey(256);
  Rng rng(21);
  ServerParty party(inst.ServerData(), inst.facilities, testing::LooseConfig(inst), std::nullopt, 5);
  client::ClientParty cp(inst.ClientData(), kp);
  cp.BuildIndicator(rng);

  auto short_vec = cp.indicator().vec;
  short_vec.entries.pop_back();
  auto abort = party.InstallIndicatorVector(kp.pub, short_vec);
  ASSERT_TRUE(abort);
  EXPECT_FALSE(party.client_store());

  EXPECT_FALSE(party.InstallIndicatorVector(kp.pub, cp.indicator().vec));
  ASSERT_TRUE(party.client_store());

  // Users 1 and 2 leave the client; only [0, 4) is resent.
  const std::vector<UserId> changed{1, 2};
  const auto upd = cp.UpdateMembership(changed, 0, 4, rng);
  EXPECT_FALSE(party.UpdateIndicatorWindow(upd.offset, upd.entries, upd.declared_count,
                                           upd.combined_randomizer));
  Rng arng(3);
  const auto ans = party.AnswerClientBased(QueryKind::kRnn, FacilitySet::Existing(inst.facilities), arng);
  // Client now {3, 5}.
  EXPECT_EQ(Decrypt(kp, ans.cts[0]), 0);
  EXPECT_EQ(Decrypt(kp, ans.cts[1]), 2);

  const auto before = party.client_store();
  EXPECT_TRUE(party.UpdateIndicatorWindow(0, upd.entries, upd.declared_count + 1,
                                          upd.combined_randomizer));
  EXPECT_EQ(party.client_store(), before);
}

TEST(ServerParty, WeakKeyRejectedInProduction) {
  const auto inst = WorkedExampleInstance();
  auto cfg = testing::LooseConfig(inst);
  cfg.production = true;
  const auto& kp = TestKey(256);
  Rng rng(22);
  ServerParty party(inst.ServerData(), inst.facilities, cfg, std::nullopt, 5);
  auto state = Indicator(inst, kp, rng);
  auto abort = party.InstallIndicatorVector(kp.pub, state.vec);
  ASSERT_TRUE(abort);
  EXPECT_EQ(abort->code, AbortCode::kWeakKey);
}

TEST(ServerParty, NoiseSeedReplay) {
  const auto inst = WorkedExampleInstance();
  auto cfg = testing::LooseConfig(inst);
  cfg.epsilon = dp::kEpsilonLn2;
  const auto& kp = TestKey(256);
  Rng rng(23);
  ServerParty party(inst.ServerData(), inst.facilities, cfg, std::nullopt, 99);
  auto state = Indicator(inst, kp, rng);
  ASSERT_FALSE(party.InstallIndicatorVector(kp.pub, state.vec));
  Rng replay(ServerParty::NoiseSeedFor(99));
  for (int q = 0; q < 5; ++q) {
    Rng arng(q);
    const auto ans = party.AnswerClientBased(QueryKind::kRnn, FacilitySet::Existing(inst.facilities), arng);
    const auto noise = DrawNoise(QueryKind::kRnn, 2, 0, cfg.epsilon, replay);
    EXPECT_EQ(dp::DecodeSigned(Decrypt(kp, ans.cts[0]), kp.pub.m), 1 + noise[0]);
    EXPECT_EQ(dp::DecodeSigned(Decrypt(kp, ans.cts[1]), kp.pub.m), 2 + noise[1]);
  }
}

TEST(ServerParty, EpsilonSpentAccumulates) {
  const auto inst = WorkedExampleInstance();
  auto cfg = testing::LooseConfig(inst);
  const auto& kp = TestKey(256);
  Rng rng(24);
  ServerParty exact(inst.ServerData(), inst.facilities, cfg, std::nullopt, 7);
  auto state = Indicator(inst, kp, rng);
  ASSERT_FALSE(exact.InstallIndicatorVector(kp.pub, state.vec));
  exact.AnswerClientBased(QueryKind::kRnn, FacilitySet::Existing(inst.facilities), rng);
  EXPECT_EQ(exact.epsilon_spent(), 0.0);

  cfg.epsilon = 0.1;
  ServerParty noisy(inst.ServerData(), inst.facilities, cfg, kp, 7);
  ASSERT_FALSE(noisy.InstallIndicatorVector(kp.pub, state.vec));
  const auto fs = FacilitySet::Existing(inst.facilities);
  noisy.AnswerClientBased(QueryKind::kRnn, fs, rng);
  noisy.AnswerClientBased(QueryKind::kAvg, fs, rng);
  noisy.AnswerClientBased(QueryKind::kMax, fs, rng);
  EXPECT_NEAR(noisy.epsilon_spent(), 0.4, 1e-12);
  const std::vector<Ciphertext> masked{Encrypt(kp, 3, rng), Encrypt(kp, 4, rng)};
  noisy.DecryptStep8(QueryKind::kRnn, masked, 0);
  EXPECT_NEAR(noisy.epsilon_spent(), 0.5, 1e-12);
}

}  // namespace
}  // namespace locagg::server
