#include "locagg/client_party.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "locagg/dp.h"

namespace locagg::client {
namespace {

std::int64_t ToInt64(const BigInt& v) {
  if (!v.fits_slong_p()) {
    throw ProtocolAbort({AbortCode::kCryptoError, "decoded value exceeds 64 bits"});
  }
  return v.get_si();
}

BigInt InvertUnit(const BigInt& a, const BigInt& m) {
  BigInt out;
  if (mpz_invert(out.get_mpz_t(), a.get_mpz_t(), m.get_mpz_t()) == 0) {
    throw paillier::PaillierError("randomizer not invertible");
  }
  return out;
}

QueryResult MakeAvg(std::int64_t total, std::int64_t count, std::optional<double> epsilon) {
  if (count == 0 && !epsilon) throw NoCommonUsersError();
  AvgResult avg{total, count, std::nullopt};
  if (count != 0) avg.average = Rational::Of(total, count);
  return QueryResult{avg, epsilon};
}

}  // namespace

void ClientDataset::Validate() const {
  std::unordered_set<UserId> seen;
  for (UserId id : user_ids) {
    if (id >= superset_size) throw std::invalid_argument("client id outside the superset");
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate client id");
  }
}

ClientIndicatorState BuildIndicatorVector(std::span<const UserId> user_ids,
                                          std::uint64_t superset_size, const KeyPair& kp,
                                          Rng& rng) {
  ClientIndicatorState state;
  state.membership.assign(superset_size, false);
  for (UserId id : user_ids) {
    if (id >= superset_size) throw std::out_of_range("client id outside the superset");
    state.membership[id] = true;
  }
  const PublicKey& pk = kp.pub;
  state.vec.entries.reserve(superset_size);
  state.randomizers.reserve(superset_size);
  BigInt r(1);
  std::uint64_t count = 0;
  for (std::uint64_t i = 0; i < superset_size; ++i) {
    const bool member = state.membership[i];
    count += member ? 1 : 0;
    auto tracked = paillier::EncryptTracked(kp, BigInt(member ? 1 : 0), rng);
    r *= tracked.randomizer;
    r %= pk.m;
    state.vec.entries.push_back(std::move(tracked.ct));
    state.randomizers.push_back(std::move(tracked.randomizer));
  }
  state.vec.declared_count = count;
  state.vec.combined_randomizer = r;
  return state;
}

IndicatorUpdate UpdateIndicatorSubset(ClientIndicatorState& state,
                                      std::span<const UserId> changed_ids,
                                      std::uint64_t window_begin, std::uint64_t window_end,
                                      const KeyPair& kp, Rng& rng) {
  const std::uint64_t n = state.membership.size();
  if (window_begin > window_end || window_end > n) {
    throw std::out_of_range("update window outside the superset");
  }
  for (UserId id : changed_ids) {
    if (id < window_begin || id >= window_end) {
      throw std::out_of_range("changed id outside the update window");
    }
  }
  for (UserId id : changed_ids) state.membership[id] = !state.membership[id];

  const PublicKey& pk = kp.pub;
  BigInt removed(1);
  BigInt added(1);
  IndicatorUpdate update;
  update.offset = window_begin;
  update.entries.reserve(window_end - window_begin);
  for (std::uint64_t i = window_begin; i < window_end; ++i) {
    removed *= state.randomizers[i];
    removed %= pk.m;
    auto tracked = paillier::EncryptTracked(kp, BigInt(state.membership[i] ? 1 : 0), rng);
    added *= tracked.randomizer;
    added %= pk.m;
    state.vec.entries[i] = tracked.ct;
    state.randomizers[i] = std::move(tracked.randomizer);
    update.entries.push_back(std::move(tracked.ct));
  }
  BigInt r = state.vec.combined_randomizer * InvertUnit(removed, pk.m) * added;
  r %= pk.m;
  state.vec.combined_randomizer = r;
  state.vec.declared_count = static_cast<std::uint64_t>(
      std::count(state.membership.begin(), state.membership.end(), true));
  state.vec.verified = false;
  update.declared_count = state.vec.declared_count;
  update.combined_randomizer = r;
  return update;
}

std::vector<Ciphertext> AggregateServerBased(const EncryptedMatrix& table,
                                             std::span<const UserId> user_ids,
                                             std::uint64_t superset_size, const PublicKey& pk_s,
                                             Rng& rng) {
  std::vector<Ciphertext> out;
  out.reserve(table.size());
  for (const auto& row : table) {
    if (row.size() != superset_size) throw std::invalid_argument("table row length != superset size");
    if (user_ids.empty()) {
      out.push_back(paillier::Encrypt(pk_s, BigInt(0), rng));
      continue;
    }
    BigInt acc(1);
    for (UserId id : user_ids) {
      if (id >= superset_size) throw std::out_of_range("client id outside the superset");
      const Ciphertext& c = row[id];
      if (c.key_id != pk_s.id) throw paillier::KeyMismatchError();
      acc *= c.value;
      acc %= pk_s.m_sq;
    }
    out.push_back(Ciphertext{std::move(acc), pk_s.id});
  }
  return out;
}

MaskedValues MaskAdditive(std::span<const Ciphertext> cts, const PublicKey& pk, Rng& rng) {
  std::vector<BigInt> masks;
  masks.reserve(cts.size());
  for (std::size_t i = 0; i < cts.size(); ++i) masks.push_back(rng.UniformBelow(pk.m));
  return MaskAdditiveWith(cts, masks, pk, rng);
}

MaskedValues MaskAdditiveWith(std::span<const Ciphertext> cts, std::span<const BigInt> masks,
                              const PublicKey& pk, Rng& rng) {
  if (cts.size() != masks.size()) throw std::invalid_argument("mask count mismatch");
  MaskedValues out;
  out.masks.assign(masks.begin(), masks.end());
  out.cts.reserve(cts.size());
  for (std::size_t i = 0; i < cts.size(); ++i) {
    out.cts.push_back(paillier::Add(pk, cts[i], paillier::Encrypt(pk, masks[i], rng)));
  }
  return out;
}

std::vector<BigInt> Unmask(std::span<const BigInt> values, std::span<const BigInt> masks,
                           const BigInt& m) {
  if (values.size() != masks.size()) throw std::invalid_argument("mask count mismatch");
  std::vector<BigInt> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    BigInt v = (values[i] - masks[i]) % m;
    if (sgn(v) < 0) v += m;
    out.push_back(dp::DecodeSigned(v, m));
  }
  return out;
}

MaxqMasked MaxqMaskAndPermute(std::span<const Ciphertext> buckets, const PublicKey& pk,
                              Rng& rng) {
  MaxqMasked out;
  std::vector<Ciphertext> raised;
  raised.reserve(buckets.size());
  out.exponents.reserve(buckets.size());
  for (const Ciphertext& c : buckets) {
    BigInt v;
    do {
      v = static_cast<unsigned long>(rng.NextU64());
    } while (sgn(v) == 0 || gcd(v, pk.m) != 1);
    raised.push_back(paillier::ScalarMul(pk, c, v));
    out.exponents.push_back(std::move(v));
  }
  out.permutation.resize(buckets.size());
  std::iota(out.permutation.begin(), out.permutation.end(), std::size_t{0});
  std::shuffle(out.permutation.begin(), out.permutation.end(), rng);
  out.cts.reserve(buckets.size());
  for (std::size_t p : out.permutation) out.cts.push_back(raised[p]);
  return out;
}

std::optional<std::int64_t> DecodeMaxq(std::span<const BigInt> permuted_values,
                                       std::span<const std::size_t> permutation) {
  if (permuted_values.size() != permutation.size()) {
    throw std::invalid_argument("permutation length mismatch");
  }
  std::vector<const BigInt*> original(permutation.size(), nullptr);
  for (std::size_t p = 0; p < permutation.size(); ++p) {
    if (permutation[p] >= original.size() || original[permutation[p]] != nullptr) {
      throw std::invalid_argument("not a permutation");
    }
    original[permutation[p]] = &permuted_values[p];
  }
  for (std::size_t j = original.size(); j-- > 0;) {
    if (sgn(*original[j]) != 0) return static_cast<std::int64_t>(j);
  }
  return std::nullopt;
}

std::vector<Ciphertext> PrepareMasked(QueryKind kind, const EncryptedMatrix& table,
                                      std::int64_t w, std::span<const UserId> user_ids,
                                      std::uint64_t superset_size, const PublicKey& pk_s,
                                      Rng& rng, PendingServerBased& pending,
                                      std::vector<Ciphertext>* aggregated,
                                      std::span<const BigInt> forced_masks) {
  std::vector<Ciphertext> agg = AggregateServerBased(table, user_ids, superset_size, pk_s, rng);
  if (aggregated) *aggregated = agg;
  pending = PendingServerBased{kind, pk_s.m, {}, {}, w};
  if (kind == QueryKind::kMax) {
    MaxqMasked masked = MaxqMaskAndPermute(agg, pk_s, rng);
    pending.permutation = std::move(masked.permutation);
    return std::move(masked.cts);
  }
  MaskedValues masked = forced_masks.empty() ? MaskAdditive(agg, pk_s, rng)
                                             : MaskAdditiveWith(agg, forced_masks, pk_s, rng);
  pending.masks = std::move(masked.masks);
  return std::move(masked.cts);
}

QueryResult FinishServerBased(const PendingServerBased& pending,
                              std::span<const BigInt> values, std::optional<double> epsilon) {
  switch (pending.kind) {
    case QueryKind::kRnn: {
      RnnResult rnn;
      for (const BigInt& v : Unmask(values, pending.masks, pending.modulus)) {
        rnn.counts.push_back(ToInt64(v));
      }
      return QueryResult{rnn, epsilon};
    }
    case QueryKind::kAvg: {
      if (values.size() != 2) throw ProtocolAbort({AbortCode::kMalformed, "AVGQ needs two values"});
      const auto plain = Unmask(values, pending.masks, pending.modulus);
      return MakeAvg(ToInt64(plain[0]), ToInt64(plain[1]), epsilon);
    }
    case QueryKind::kMax:
      return QueryResult{MaxResult{DecodeMaxq(values, pending.permutation), pending.w}, epsilon};
  }
  throw std::logic_error("unknown query kind");
}

QueryResult DecryptResults(const KeyPair& kp, QueryKind kind, std::span<const Ciphertext> cts,
                           std::optional<double> epsilon, std::size_t* decryptions) {
  std::size_t calls = 0;
  auto decrypt = [&](const Ciphertext& c) {
    ++calls;
    return dp::DecodeSigned(paillier::Decrypt(kp, c), kp.pub.m);
  };
  QueryResult result;
  switch (kind) {
    case QueryKind::kRnn: {
      RnnResult rnn;
      for (const Ciphertext& c : cts) rnn.counts.push_back(ToInt64(decrypt(c)));
      result = QueryResult{rnn, epsilon};
      break;
    }
    case QueryKind::kAvg: {
      if (cts.size() != 2) throw ProtocolAbort({AbortCode::kMalformed, "AVGQ needs two ciphertexts"});
      const std::int64_t total = ToInt64(decrypt(cts[0]));
      const std::int64_t count = ToInt64(decrypt(cts[1]));
      result = MakeAvg(total, count, epsilon);
      break;
    }
    case QueryKind::kMax: {
      if (cts.empty()) throw ProtocolAbort({AbortCode::kMalformed, "MAXQ needs w + 1 ciphertexts"});
      MaxResult max{std::nullopt, static_cast<std::int64_t>(cts.size()) - 1};
      for (std::size_t j = cts.size(); j-- > 0;) {
        ++calls;
        if (sgn(paillier::Decrypt(kp, cts[j])) != 0) {
          max.distance = static_cast<std::int64_t>(j);
          break;
        }
      }
      result = QueryResult{max, epsilon};
      break;
    }
  }
  if (decryptions) *decryptions = calls;
  return result;
}

ClientParty::ClientParty(ClientDataset data, std::optional<KeyPair> client_key)
    : data_(std::move(data)), key_(std::move(client_key)) {
  data_.Validate();
}

const KeyPair& ClientParty::client_key() const {
  if (!key_) throw std::logic_error("client has no key pair");
  return *key_;
}

const ClientIndicatorState& ClientParty::BuildIndicator(Rng& rng) {
  indicator_ = BuildIndicatorVector(data_.user_ids, data_.superset_size, client_key(), rng);
  return *indicator_;
}

const ClientIndicatorState& ClientParty::indicator() const {
  if (!indicator_) throw std::logic_error("indicator vector not built");
  return *indicator_;
}

IndicatorUpdate ClientParty::UpdateMembership(std::span<const UserId> changed_ids,
                                              std::uint64_t window_begin,
                                              std::uint64_t window_end, Rng& rng) {
  if (!indicator_) throw std::logic_error("indicator vector not built");
  IndicatorUpdate update =
      UpdateIndicatorSubset(*indicator_, changed_ids, window_begin, window_end, client_key(), rng);
  data_.user_ids.clear();
  for (std::uint64_t i = 0; i < indicator_->membership.size(); ++i) {
    if (indicator_->membership[i]) data_.user_ids.push_back(i);
  }
  return update;
}

}  // namespace locagg::client
