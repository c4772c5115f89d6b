#include "locagg/server_party.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_set>

#include "locagg/dp.h"

namespace locagg::server {
namespace {

BigInt MulMod(const BigInt& a, const BigInt& b, const BigInt& mod) {
  BigInt out = a * b;
  out %= mod;
  return out;
}

BigInt PowMod(const BigInt& base, const BigInt& exp, const BigInt& mod) {
  BigInt out;
  mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return out;
}

BigInt PowModU(const BigInt& base, std::uint64_t exp, const BigInt& mod) {
  BigInt out;
  mpz_powm_ui(out.get_mpz_t(), base.get_mpz_t(), exp, mod.get_mpz_t());
  return out;
}

BigInt InvMod(const BigInt& a, const BigInt& mod) {
  BigInt out;
  if (mpz_invert(out.get_mpz_t(), a.get_mpz_t(), mod.get_mpz_t()) == 0) {
    throw paillier::MalformedCiphertextError("aggregate not invertible modulo m^2");
  }
  return out;
}

// Superset index -> position in data.users, or -1.
std::vector<std::int64_t> ColumnOwners(const ServerDataset& data) {
  std::vector<std::int64_t> owner(data.superset_size, -1);
  for (std::size_t i = 0; i < data.users.size(); ++i) {
    owner[data.users[i].id] = static_cast<std::int64_t>(i);
  }
  return owner;
}

const BigInt& Entry(const EncryptedIndicatorVector& vec, UserId id) {
  return vec.entries.at(id).value;
}

Ciphertext EncryptNoiseOrZero(const PublicKey& pk, const std::vector<std::int64_t>& noise,
                              std::size_t i, Rng& rng) {
  const BigInt plain = noise.empty() ? BigInt(0) : dp::EncodeSigned(BigInt(noise[i]), pk.m);
  return paillier::Encrypt(pk, plain, rng);
}

}  // namespace

void ServerConfig::Validate() const {
  if (min_client_users < 1) throw std::invalid_argument("min_client_users must be >= 1");
  if (epsilon && !(*epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (max_coordinate < 1) throw std::invalid_argument("max_coordinate must be >= 1");
  if (!(w_range_factor >= 1.0)) throw std::invalid_argument("w_range_factor must be >= 1");
}

void ServerDataset::Validate(std::int32_t max_coordinate) const {
  std::unordered_set<UserId> seen;
  for (const UserRecord& u : users) {
    if (u.id >= superset_size) throw std::invalid_argument("user id outside the superset");
    if (!seen.insert(u.id).second) throw std::invalid_argument("duplicate user id");
    if (!InRange(u.location, max_coordinate)) {
      throw std::invalid_argument("user location out of range");
    }
  }
}

std::optional<Abort> ValidateFacilities(const FacilitySet& fs,
                                        std::span<const Location> known_existing,
                                        const ServerConfig& cfg) {
  const auto k = static_cast<std::int64_t>(known_existing.size());
  const auto size = static_cast<std::int64_t>(fs.size());
  const std::int64_t floor = std::max<std::int64_t>(k - cfg.theta2, 0);
  if (size > k + cfg.theta1) {
    return Abort{AbortCode::kTooManyFacilities,
                 std::to_string(size) + " facilities exceed k + theta1 = " +
                     std::to_string(k + cfg.theta1)};
  }
  if (size < floor || size == 0) {
    return Abort{AbortCode::kTooFewFacilities,
                 std::to_string(size) + " facilities below k - theta2 = " + std::to_string(floor)};
  }
  std::int64_t present = 0;
  for (const Location& e : known_existing) {
    if (std::find(fs.facilities.begin(), fs.facilities.end(), e) != fs.facilities.end()) {
      ++present;
    }
  }
  if (present < floor) {
    return Abort{AbortCode::kMissingExisting,
                 "only " + std::to_string(present) + " existing facilities present, need " +
                     std::to_string(floor)};
  }
  for (const Location& f : fs.facilities) {
    if (!InRange(f, cfg.max_coordinate)) {
      return Abort{AbortCode::kInvalidFacility, "facility coordinates out of range"};
    }
  }
  return std::nullopt;
}

ServerAssignmentState AssignUsers(const ServerDataset& data,
                                  std::span<const Location> facilities, Metric metric) {
  ServerAssignmentState state;
  state.per_user.reserve(data.users.size());
  for (const UserRecord& u : data.users) {
    state.per_user.push_back(AssignNearest(u.location, facilities, metric));
    state.max_distance = std::max(state.max_distance, state.per_user.back().distance);
  }
  return state;
}

void EncryptionPool::Fill(const KeyPair& kp, std::size_t zeros, std::size_t ones, Rng& rng) {
  std::vector<Ciphertext> z, o;
  z.reserve(zeros);
  o.reserve(ones);
  for (std::size_t i = 0; i < zeros; ++i) z.push_back(paillier::Encrypt(kp, BigInt(0), rng));
  for (std::size_t i = 0; i < ones; ++i) o.push_back(paillier::Encrypt(kp, BigInt(1), rng));
  std::lock_guard lock(mu_);
  zeros_.insert(zeros_.end(), std::make_move_iterator(z.begin()), std::make_move_iterator(z.end()));
  ones_.insert(ones_.end(), std::make_move_iterator(o.begin()), std::make_move_iterator(o.end()));
}

std::optional<Ciphertext> EncryptionPool::TakeZero() {
  std::lock_guard lock(mu_);
  if (zeros_.empty()) return std::nullopt;
  Ciphertext c = std::move(zeros_.back());
  zeros_.pop_back();
  return c;
}

std::optional<Ciphertext> EncryptionPool::TakeOne() {
  std::lock_guard lock(mu_);
  if (ones_.empty()) return std::nullopt;
  Ciphertext c = std::move(ones_.back());
  ones_.pop_back();
  return c;
}

std::size_t EncryptionPool::zeros_left() const {
  std::lock_guard lock(mu_);
  return zeros_.size();
}

std::size_t EncryptionPool::ones_left() const {
  std::lock_guard lock(mu_);
  return ones_.size();
}

Ciphertext TableEncryptor::Zero() {
  if (pool_) {
    if (auto c = pool_->TakeZero()) return std::move(*c);
  }
  return Encrypt(BigInt(0));
}

Ciphertext TableEncryptor::One() {
  if (pool_) {
    if (auto c = pool_->TakeOne()) return std::move(*c);
  }
  return Encrypt(BigInt(1));
}

Ciphertext TableEncryptor::Encrypt(const BigInt& x) {
  ++fresh_;
  return paillier::Encrypt(kp_, x, rng_);
}

EncryptedMatrix BuildRnnqTable(const ServerDataset& data, const ServerAssignmentState& state,
                               std::size_t facility_count, TableEncryptor& enc) {
  const auto owner = ColumnOwners(data);
  EncryptedMatrix table(facility_count);
  for (std::size_t j = 0; j < facility_count; ++j) {
    auto& row = table[j];
    row.reserve(data.superset_size);
    for (std::uint64_t i = 0; i < data.superset_size; ++i) {
      const bool hit = owner[i] >= 0 && state.per_user[owner[i]].nearest_index == j;
      row.push_back(hit ? enc.One() : enc.Zero());
    }
  }
  return table;
}

EncryptedMatrix BuildAvgqTable(const ServerDataset& data, const ServerAssignmentState& state,
                               TableEncryptor& enc) {
  const auto owner = ColumnOwners(data);
  EncryptedMatrix table(2);
  table[0].reserve(data.superset_size);
  table[1].reserve(data.superset_size);
  for (std::uint64_t i = 0; i < data.superset_size; ++i) {
    if (owner[i] < 0) {
      table[0].push_back(enc.Zero());
      continue;
    }
    const std::int64_t d = state.per_user[owner[i]].distance;
    table[0].push_back(d == 0 ? enc.Zero() : d == 1 ? enc.One() : enc.Encrypt(BigInt(d)));
  }
  for (std::uint64_t i = 0; i < data.superset_size; ++i) {
    table[1].push_back(owner[i] >= 0 ? enc.One() : enc.Zero());
  }
  return table;
}

std::int64_t DrawW(std::int64_t max_distance, double factor, Rng& rng) {
  const std::int64_t lo = max_distance + 1;
  const auto scaled = static_cast<std::int64_t>(std::floor(factor * static_cast<double>(max_distance)));
  return rng.UniformInt(lo, std::max(lo, scaled));
}

MaxqTable BuildMaxqTable(const ServerDataset& data, const ServerAssignmentState& state,
                         TableEncryptor& enc, Rng& rng, double w_range_factor) {
  MaxqTable out;
  out.w = DrawW(state.max_distance, w_range_factor, rng);
  const auto owner = ColumnOwners(data);
  out.rows.resize(static_cast<std::size_t>(out.w) + 1);
  for (std::int64_t j = 0; j <= out.w; ++j) {
    auto& row = out.rows[j];
    row.reserve(data.superset_size);
    for (std::uint64_t i = 0; i < data.superset_size; ++i) {
      const bool hit = owner[i] >= 0 && state.per_user[owner[i]].distance == j;
      row.push_back(hit ? enc.One() : enc.Zero());
    }
  }
  return out;
}

std::vector<std::int64_t> DrawNoise(QueryKind kind, std::size_t entries,
                                    std::int64_t max_distance,
                                    std::optional<double> epsilon, Rng& noise_rng) {
  std::vector<std::int64_t> noise;
  if (!epsilon) return noise;
  noise.reserve(entries);
  switch (kind) {
    case QueryKind::kRnn: {
      const dp::NoiseSpec spec(*epsilon, static_cast<double>(dp::SensitivityFor(dp::SensitivityQuery::kRnnq)));
      for (std::size_t i = 0; i < entries; ++i) noise.push_back(dp::LaplaceSample(spec, noise_rng));
      break;
    }
    case QueryKind::kAvg: {
      if (entries != 2) throw std::invalid_argument("AVGQ answers have two entries");
      const std::int64_t total_sens =
          dp::SensitivityFor(dp::SensitivityQuery::kAvgqTotal, max_distance);
      // Every distance is zero when max is zero; the total cannot change.
      noise.push_back(total_sens > 0
                          ? dp::LaplaceSample(dp::NoiseSpec(*epsilon, static_cast<double>(total_sens)),
                                              noise_rng)
                          : 0);
      const dp::NoiseSpec count_spec(
          *epsilon, static_cast<double>(dp::SensitivityFor(dp::SensitivityQuery::kAvgqCount)));
      noise.push_back(dp::LaplaceSample(count_spec, noise_rng));
      break;
    }
    case QueryKind::kMax: {
      const dp::NoiseSpec spec(
          *epsilon, static_cast<double>(dp::SensitivityFor(dp::SensitivityQuery::kMaxqBucket)));
      for (std::size_t i = 0; i < entries; ++i) noise.push_back(dp::LaplaceSample(spec, noise_rng));
      break;
    }
  }
  return noise;
}

std::vector<BigInt> DecryptMasked(const KeyPair& kp, std::span<const Ciphertext> masked,
                                  std::span<const std::int64_t> noise) {
  if (!noise.empty() && noise.size() != masked.size()) {
    throw std::invalid_argument("noise vector length mismatch");
  }
  std::vector<BigInt> out;
  out.reserve(masked.size());
  for (std::size_t i = 0; i < masked.size(); ++i) {
    BigInt v = paillier::Decrypt(kp, masked[i]);
    if (!noise.empty()) {
      v += dp::EncodeSigned(BigInt(noise[i]), kp.pub.m);
      v %= kp.pub.m;
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::optional<Abort> VerifyIndicatorVector(EncryptedIndicatorVector& vec, const PublicKey& pk,
                                           const ServerConfig& cfg) {
  vec.verified = false;
  const BigInt& r = vec.combined_randomizer;
  if (sgn(r) <= 0 || r >= pk.m) {
    return Abort{AbortCode::kVerificationFailed, "combined randomizer outside [1, m)"};
  }
  BigInt product(1);
  for (const Ciphertext& c : vec.entries) {
    if (c.key_id != pk.id || sgn(c.value) <= 0 || c.value >= pk.m_sq) {
      return Abort{AbortCode::kVerificationFailed, "entry is not a ciphertext under the key"};
    }
    product *= c.value;
    product %= pk.m_sq;
  }
  const BigInt expected =
      MulMod(PowModU(pk.g, vec.declared_count, pk.m_sq), PowMod(r, pk.m, pk.m_sq), pk.m_sq);
  if (product != expected) {
    return Abort{AbortCode::kVerificationFailed, "product of entries != E(n_c) under r"};
  }
  if (vec.declared_count < cfg.min_client_users) {
    return Abort{AbortCode::kTooFewUsers, "n_c = " + std::to_string(vec.declared_count) +
                                              " below threshold " +
                                              std::to_string(cfg.min_client_users)};
  }
  vec.verified = true;
  return std::nullopt;
}

namespace {

struct Accumulator {
  const BigInt& mod;
  std::vector<BigInt> rnn;
  BigInt total{1};
  BigInt count{1};
  std::vector<BigInt> buckets;
  std::vector<std::size_t> population;

  Accumulator(const BigInt& m_sq, std::size_t facilities, std::int64_t max_distance)
      : mod(m_sq),
        rnn(facilities, BigInt(1)),
        buckets(static_cast<std::size_t>(max_distance) + 1, BigInt(1)),
        population(static_cast<std::size_t>(max_distance) + 1, 0) {}

  void Add(const BigInt& t, const Assignment& a) {
    rnn[a.nearest_index] = MulMod(rnn[a.nearest_index], t, mod);
    count = MulMod(count, t, mod);
    if (a.distance > 0) {
      total = MulMod(total, PowModU(t, static_cast<std::uint64_t>(a.distance), mod), mod);
    }
    buckets[a.distance] = MulMod(buckets[a.distance], t, mod);
    ++population[a.distance];
  }
};

}  // namespace

AggregateCache PrecomputeAggregates(const ServerDataset& data,
                                    const EncryptedIndicatorVector& vec, const PublicKey& pk,
                                    std::span<const Location> existing, Metric metric) {
  if (!vec.verified) throw ProtocolAbort({AbortCode::kNotSetUp, "indicator vector not verified"});
  AggregateCache cache;
  cache.existing.assign(existing.begin(), existing.end());
  cache.assignment = AssignUsers(data, existing, metric);
  Accumulator acc(pk.m_sq, existing.size(), cache.assignment.max_distance);
  for (std::size_t i = 0; i < data.users.size(); ++i) {
    acc.Add(Entry(vec, data.users[i].id), cache.assignment.per_user[i]);
  }
  cache.rnn = std::move(acc.rnn);
  cache.total = std::move(acc.total);
  cache.count = std::move(acc.count);
  cache.buckets = std::move(acc.buckets);
  cache.bucket_population = std::move(acc.population);
  return cache;
}

void ApplyIndicatorUpdate(AggregateCache& cache, const ServerDataset& data,
                          std::uint64_t offset, std::span<const Ciphertext> old_window,
                          std::span<const Ciphertext> new_window, const PublicKey& pk) {
  if (old_window.size() != new_window.size()) throw std::invalid_argument("window size mismatch");
  const std::uint64_t end = offset + new_window.size();
  const BigInt& mod = pk.m_sq;
  for (std::size_t i = 0; i < data.users.size(); ++i) {
    const UserId id = data.users[i].id;
    if (id < offset || id >= end) continue;
    const BigInt& before = old_window[id - offset].value;
    const BigInt& after = new_window[id - offset].value;
    if (before == after) continue;
    const BigInt delta = MulMod(after, InvMod(before, mod), mod);
    const Assignment& a = cache.assignment.per_user[i];
    cache.rnn[a.nearest_index] = MulMod(cache.rnn[a.nearest_index], delta, mod);
    cache.count = MulMod(cache.count, delta, mod);
    if (a.distance > 0) {
      cache.total = MulMod(cache.total, PowModU(delta, static_cast<std::uint64_t>(a.distance), mod), mod);
    }
    cache.buckets[a.distance] = MulMod(cache.buckets[a.distance], delta, mod);
  }
}

QueryAggregates AggregatesFromScratch(const ServerDataset& data,
                                      const EncryptedIndicatorVector& vec, const PublicKey& pk,
                                      std::span<const Location> facilities, Metric metric) {
  const ServerAssignmentState state = AssignUsers(data, facilities, metric);
  Accumulator acc(pk.m_sq, facilities.size(), state.max_distance);
  QueryAggregates out;
  for (std::size_t i = 0; i < data.users.size(); ++i) {
    acc.Add(Entry(vec, data.users[i].id), state.per_user[i]);
    if (state.per_user[i].distance > 0) ++out.exponentiations;
  }
  out.rnn = std::move(acc.rnn);
  out.total = std::move(acc.total);
  out.count = std::move(acc.count);
  out.buckets = std::move(acc.buckets);
  out.bucket_population = std::move(acc.population);
  out.max_distance = state.max_distance;
  out.reassigned_users = data.users.size();
  return out;
}

QueryAggregates AggregatesForQuery(const AggregateCache& cache, const ServerDataset& data,
                                   const EncryptedIndicatorVector& vec, const PublicKey& pk,
                                   const FacilitySet& fs, Metric metric) {
  const auto& existing = cache.existing;
  const bool same_prefix =
      fs.size() >= existing.size() &&
      std::equal(existing.begin(), existing.end(), fs.facilities.begin());
  if (!same_prefix || fs.size() > existing.size() + 1 || existing.empty()) {
    return AggregatesFromScratch(data, vec, pk, fs.facilities, metric);
  }

  QueryAggregates out;
  out.incremental = true;
  out.rnn = cache.rnn;
  out.total = cache.total;
  out.count = cache.count;
  out.buckets = cache.buckets;
  out.bucket_population = cache.bucket_population;
  out.max_distance = cache.assignment.max_distance;
  if (fs.size() == existing.size()) return out;

  const BigInt& mod = pk.m_sq;
  const Location candidate = fs.facilities.back();

  // Products of the attracted users' entries, grouped by what they leave.
  std::map<std::uint32_t, BigInt> left_facility;
  std::map<std::int64_t, BigInt> left_bucket;
  std::map<std::int64_t, BigInt> joined_bucket;
  BigInt attracted(1);
  BigInt distance_drop(1);

  for (std::size_t i = 0; i < data.users.size(); ++i) {
    const Assignment& old = cache.assignment.per_user[i];
    const std::int64_t d = Distance(data.users[i].location, candidate, metric);
    // Ties stay with the lower-indexed existing facility.
    if (d >= old.distance) continue;
    const BigInt& t = Entry(vec, data.users[i].id);
    ++out.reassigned_users;

    auto [fit, fnew] = left_facility.try_emplace(old.nearest_index, 1);
    fit->second = MulMod(fit->second, t, mod);
    auto [lit, lnew] = left_bucket.try_emplace(old.distance, 1);
    lit->second = MulMod(lit->second, t, mod);
    auto [jit, jnew] = joined_bucket.try_emplace(d, 1);
    jit->second = MulMod(jit->second, t, mod);
    attracted = MulMod(attracted, t, mod);
    distance_drop =
        MulMod(distance_drop, PowModU(t, static_cast<std::uint64_t>(old.distance - d), mod), mod);
    ++out.exponentiations;
    --out.bucket_population[old.distance];
    ++out.bucket_population[d];
  }

  for (const auto& [j, product] : left_facility) {
    out.rnn[j] = MulMod(out.rnn[j], InvMod(product, mod), mod);
    ++out.inversions;
  }
  out.rnn.push_back(attracted);
  if (out.reassigned_users > 0) {
    out.total = MulMod(out.total, InvMod(distance_drop, mod), mod);
    ++out.inversions;
  }
  for (const auto& [b, product] : left_bucket) {
    out.buckets[b] = MulMod(out.buckets[b], InvMod(product, mod), mod);
    ++out.inversions;
  }
  for (const auto& [b, product] : joined_bucket) {
    out.buckets[b] = MulMod(out.buckets[b], product, mod);
  }

  std::int64_t new_max = 0;
  for (std::int64_t b = static_cast<std::int64_t>(out.bucket_population.size()) - 1; b >= 0; --b) {
    if (out.bucket_population[b] > 0) {
      new_max = b;
      break;
    }
  }
  out.max_distance = new_max;
  out.buckets.resize(static_cast<std::size_t>(new_max) + 1);
  out.bucket_population.resize(static_cast<std::size_t>(new_max) + 1);
  return out;
}

std::vector<Ciphertext> RnnqClientAnswer(const QueryAggregates& agg, const PublicKey& pk,
                                         std::optional<double> epsilon, Rng& rng,
                                         Rng& noise_rng) {
  const auto noise = DrawNoise(QueryKind::kRnn, agg.rnn.size(), agg.max_distance, epsilon, noise_rng);
  std::vector<Ciphertext> out;
  out.reserve(agg.rnn.size());
  for (std::size_t j = 0; j < agg.rnn.size(); ++j) {
    out.push_back(paillier::Add(pk, Ciphertext{agg.rnn[j], pk.id},
                                EncryptNoiseOrZero(pk, noise, j, rng)));
  }
  return out;
}

std::array<Ciphertext, 2> AvgqClientAnswer(const QueryAggregates& agg, const PublicKey& pk,
                                           std::optional<double> epsilon, Rng& rng,
                                           Rng& noise_rng) {
  const auto noise = DrawNoise(QueryKind::kAvg, 2, agg.max_distance, epsilon, noise_rng);
  return {paillier::Add(pk, Ciphertext{agg.total, pk.id}, EncryptNoiseOrZero(pk, noise, 0, rng)),
          paillier::Add(pk, Ciphertext{agg.count, pk.id}, EncryptNoiseOrZero(pk, noise, 1, rng))};
}

MaxqAnswer MaxqClientAnswer(const QueryAggregates& agg, const PublicKey& pk,
                            std::optional<double> epsilon, double w_range_factor, Rng& rng,
                            Rng& noise_rng) {
  MaxqAnswer out;
  out.w = DrawW(agg.max_distance, w_range_factor, rng);
  const auto buckets = static_cast<std::size_t>(out.w) + 1;
  const auto noise = DrawNoise(QueryKind::kMax, buckets, agg.max_distance, epsilon, noise_rng);
  out.buckets.reserve(buckets);
  out.exponents.reserve(buckets);
  for (std::size_t j = 0; j < buckets; ++j) {
    BigInt v;
    do {
      v = static_cast<unsigned long>(rng.NextU64());
    } while (sgn(v) == 0 || gcd(v, pk.m) != 1);
    out.exponents.push_back(v);

    const bool occupied = j < agg.bucket_population.size() && agg.bucket_population[j] > 0;
    if (!occupied) {
      out.buckets.push_back(EncryptNoiseOrZero(pk, noise, j, rng));
      continue;
    }
    Ciphertext masked = paillier::ScalarMul(pk, Ciphertext{agg.buckets[j], pk.id}, v);
    if (!noise.empty()) masked = paillier::Add(pk, masked, EncryptNoiseOrZero(pk, noise, j, rng));
    out.buckets.push_back(std::move(masked));
  }
  return out;
}

ServerParty::ServerParty(ServerDataset data, std::vector<Location> known_existing,
                         ServerConfig cfg, std::optional<KeyPair> server_key, std::uint64_t seed)
    : data_(std::move(data)),
      known_existing_(std::move(known_existing)),
      cfg_(cfg),
      server_key_(std::move(server_key)),
      rng_(seed),
      noise_rng_(NoiseSeedFor(seed)) {
  cfg_.Validate();
  data_.Validate(cfg_.max_coordinate);
  for (const Location& f : known_existing_) {
    if (!InRange(f, cfg_.max_coordinate)) throw std::invalid_argument("existing facility out of range");
  }
  if (server_key_) CheckKeyStrength(server_key_->pub);
}

std::uint64_t ServerParty::NoiseSeedFor(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

void ServerParty::set_epsilon(std::optional<double> epsilon) {
  std::lock_guard lock(mu_);
  cfg_.epsilon = epsilon;
  cfg_.Validate();
}

const KeyPair& ServerParty::server_key() const {
  if (!server_key_) throw std::logic_error("server has no key pair");
  return *server_key_;
}

void ServerParty::PrecomputePool(std::size_t zeros, std::size_t ones) {
  Rng rng = ForkSessionRng();
  pool_.Fill(server_key(), zeros, ones, rng);
}

std::size_t ServerParty::pool_zeros_left() const { return pool_.zeros_left(); }

Rng ServerParty::ForkSessionRng() {
  std::lock_guard lock(mu_);
  return rng_.Fork();
}

void ServerParty::CheckKeyStrength(const PublicKey& pk) const {
  if (cfg_.production && pk.bits() < kProductionKeyBits) {
    throw ProtocolAbort({AbortCode::kWeakKey, "modulus has " + std::to_string(pk.bits()) +
                                                  " bits, production requires " +
                                                  std::to_string(kProductionKeyBits)});
  }
}

void ServerParty::CheckFacilities(const FacilitySet& fs) const {
  if (auto abort = ValidateFacilities(fs, known_existing_, cfg_)) throw ProtocolAbort(*abort);
}

std::optional<Abort> ServerParty::InstallIndicatorVector(const PublicKey& pk,
                                                         EncryptedIndicatorVector vec) {
  try {
    CheckKeyStrength(pk);
  } catch (const ProtocolAbort& e) {
    return e.abort();
  }
  if (vec.entries.size() != data_.superset_size) {
    return Abort{AbortCode::kMalformed, "indicator vector length != superset size"};
  }
  if (auto abort = VerifyIndicatorVector(vec, pk, cfg_)) return abort;
  auto store = std::make_shared<ClientStore>();
  store->cache = PrecomputeAggregates(data_, vec, pk, known_existing_, cfg_.metric);
  store->pk = pk;
  store->vec = std::move(vec);
  std::lock_guard lock(mu_);
  store_ = std::move(store);
  return std::nullopt;
}

std::optional<Abort> ServerParty::UpdateIndicatorWindow(std::uint64_t offset,
                                                        std::vector<Ciphertext> window,
                                                        std::uint64_t declared_count,
                                                        const BigInt& combined_randomizer) {
  auto current = client_store();
  if (!current) return Abort{AbortCode::kNotSetUp, "no indicator vector installed"};
  if (offset > data_.superset_size || window.size() > data_.superset_size - offset) {
    return Abort{AbortCode::kMalformed, "update window outside the superset"};
  }
  auto next = std::make_shared<ClientStore>(*current);
  const auto begin = next->vec.entries.begin() + static_cast<std::ptrdiff_t>(offset);
  std::vector<Ciphertext> old_window(begin, begin + static_cast<std::ptrdiff_t>(window.size()));
  std::copy(window.begin(), window.end(), begin);
  next->vec.declared_count = declared_count;
  next->vec.combined_randomizer = combined_randomizer;
  if (auto abort = VerifyIndicatorVector(next->vec, next->pk, cfg_)) return abort;
  ApplyIndicatorUpdate(next->cache, data_, offset, old_window, window, next->pk);
  std::lock_guard lock(mu_);
  store_ = std::move(next);
  return std::nullopt;
}

std::shared_ptr<const ClientStore> ServerParty::client_store() const {
  std::lock_guard lock(mu_);
  return store_;
}

ServerTable ServerParty::BuildTable(QueryKind kind, const FacilitySet& fs, Rng& rng) {
  CheckFacilities(fs);
  const ServerAssignmentState state = AssignUsers(data_, fs.facilities, cfg_.metric);
  TableEncryptor enc(server_key(), rng, &pool_);
  ServerTable out{kind, {}, 0, state.max_distance};
  switch (kind) {
    case QueryKind::kRnn:
      out.rows = BuildRnnqTable(data_, state, fs.size(), enc);
      break;
    case QueryKind::kAvg:
      out.rows = BuildAvgqTable(data_, state, enc);
      break;
    case QueryKind::kMax: {
      MaxqTable t = BuildMaxqTable(data_, state, enc, rng, cfg_.w_range_factor);
      out.w = t.w;
      out.rows = std::move(t.rows);
      break;
    }
  }
  return out;
}

void ServerParty::ChargeEpsilon(QueryKind kind) {
  if (!cfg_.epsilon) return;
  // AVGQ releases two noisy values; the other answers are one histogram each.
  epsilon_spent_ += (kind == QueryKind::kAvg ? 2 : 1) * *cfg_.epsilon;
}

double ServerParty::epsilon_spent() const {
  std::lock_guard lock(mu_);
  return epsilon_spent_;
}

ServerParty::Step8 ServerParty::DecryptStep8(QueryKind kind, std::span<const Ciphertext> masked,
                                             std::int64_t max_distance) {
  Step8 out;
  {
    std::lock_guard lock(mu_);
    out.noise = DrawNoise(kind, masked.size(), max_distance, cfg_.epsilon, noise_rng_);
    ChargeEpsilon(kind);
  }
  out.decrypted = DecryptMasked(server_key(), masked);
  out.returned = out.decrypted;
  const BigInt& m = server_key().pub.m;
  for (std::size_t i = 0; i < out.noise.size(); ++i) {
    out.returned[i] += dp::EncodeSigned(BigInt(out.noise[i]), m);
    out.returned[i] %= m;
  }
  return out;
}

ClientBasedAnswer ServerParty::AnswerClientBased(QueryKind kind, const FacilitySet& fs, Rng& rng) {
  auto store = client_store();
  if (!store) throw ProtocolAbort({AbortCode::kNotSetUp, "no indicator vector installed"});
  CheckFacilities(fs);
  ClientBasedAnswer out{kind, 0, {}, {}};
  out.aggregates = AggregatesForQuery(store->cache, data_, store->vec, store->pk, fs, cfg_.metric);
  std::lock_guard lock(mu_);
  ChargeEpsilon(kind);
  switch (kind) {
    case QueryKind::kRnn:
      out.cts = RnnqClientAnswer(out.aggregates, store->pk, cfg_.epsilon, rng, noise_rng_);
      break;
    case QueryKind::kAvg: {
      auto pair = AvgqClientAnswer(out.aggregates, store->pk, cfg_.epsilon, rng, noise_rng_);
      out.cts.assign(pair.begin(), pair.end());
      break;
    }
    case QueryKind::kMax: {
      MaxqAnswer a = MaxqClientAnswer(out.aggregates, store->pk, cfg_.epsilon, cfg_.w_range_factor,
                                      rng, noise_rng_);
      out.w = a.w;
      out.cts = std::move(a.buckets);
      break;
    }
  }
  return out;
}

}  // namespace locagg::server
