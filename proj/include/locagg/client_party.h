#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "locagg/encrypted.h"
#include "locagg/geo.h"
#include "locagg/paillier.h"
#include "locagg/query.h"
#include "locagg/rng.h"

// The client role: the encrypted indicator vector of the client-based
// protocols, aggregation and masking in the server-based protocols, and
// decoding of every query answer.
namespace locagg::client {

using paillier::Ciphertext;
using paillier::KeyPair;
using paillier::PublicKey;

struct ClientDataset {
  std::uint64_t superset_size = 0;  // n
  std::vector<UserId> user_ids;     // U_C

  // Ids unique and < n.
  void Validate() const;
};

// Indicator vector plus the secrets needed to update it later.
struct ClientIndicatorState {
  EncryptedIndicatorVector vec;
  std::vector<BigInt> randomizers;  // r_i of each entry
  std::vector<bool> membership;
};

ClientIndicatorState BuildIndicatorVector(std::span<const UserId> user_ids,
                                          std::uint64_t superset_size, const KeyPair& kp,
                                          Rng& rng);

// Replacement for entries [offset, offset + entries.size()).
struct IndicatorUpdate {
  std::uint64_t offset = 0;
  std::vector<Ciphertext> entries;
  std::uint64_t declared_count = 0;
  BigInt combined_randomizer;
};

// Flips the membership of changed_ids and re-encrypts every entry of
// [window_begin, window_end). Applies the change to state as well.
IndicatorUpdate UpdateIndicatorSubset(ClientIndicatorState& state,
                                      std::span<const UserId> changed_ids,
                                      std::uint64_t window_begin, std::uint64_t window_end,
                                      const KeyPair& kp, Rng& rng);

// Server-based step 5: per row, the product of the client's columns. Rows
// aggregated over no columns become a fresh E(0).
std::vector<Ciphertext> AggregateServerBased(const EncryptedMatrix& table,
                                             std::span<const UserId> user_ids,
                                             std::uint64_t superset_size, const PublicKey& pk_s,
                                             Rng& rng);

struct MaskedValues {
  std::vector<Ciphertext> cts;
  std::vector<BigInt> masks;
};

// Multiplies each ciphertext by E(v_j), v_j uniform in [0, m).
MaskedValues MaskAdditive(std::span<const Ciphertext> cts, const PublicKey& pk, Rng& rng);
MaskedValues MaskAdditiveWith(std::span<const Ciphertext> cts, std::span<const BigInt> masks,
                              const PublicKey& pk, Rng& rng);

// (value - mask) mod m, signed-decoded.
std::vector<BigInt> Unmask(std::span<const BigInt> values, std::span<const BigInt> masks,
                           const BigInt& m);

struct MaxqMasked {
  std::vector<Ciphertext> cts;          // permuted
  std::vector<std::size_t> permutation;  // cts[p] came from bucket permutation[p]
  std::vector<BigInt> exponents;         // per original bucket
};

// Raises bucket j to a secret v_j in [1, 2^64) coprime to m, then shuffles.
MaxqMasked MaxqMaskAndPermute(std::span<const Ciphertext> buckets, const PublicKey& pk,
                              Rng& rng);

// Largest original bucket index whose value is nonzero.
std::optional<std::int64_t> DecodeMaxq(std::span<const BigInt> permuted_values,
                                       std::span<const std::size_t> permutation);

// What the client keeps between step 6 and step 10 of a server-based query.
struct PendingServerBased {
  QueryKind kind = QueryKind::kRnn;
  BigInt modulus;
  std::vector<BigInt> masks;             // RNN, AVG
  std::vector<std::size_t> permutation;  // MAX
  std::int64_t w = 0;
};

// Server-based steps 5-6. forced_masks replaces the uniform masks (tests only).
std::vector<Ciphertext> PrepareMasked(QueryKind kind, const EncryptedMatrix& table,
                                      std::int64_t w, std::span<const UserId> user_ids,
                                      std::uint64_t superset_size, const PublicKey& pk_s,
                                      Rng& rng, PendingServerBased& pending,
                                      std::vector<Ciphertext>* aggregated = nullptr,
                                      std::span<const BigInt> forced_masks = {});

// Server-based step 10.
QueryResult FinishServerBased(const PendingServerBased& pending,
                              std::span<const BigInt> values, std::optional<double> epsilon);

// Client-based step 6. For MAXQ buckets are decrypted from index w down and
// decryption stops at the first nonzero one; *decryptions counts the calls.
QueryResult DecryptResults(const KeyPair& kp, QueryKind kind, std::span<const Ciphertext> cts,
                           std::optional<double> epsilon, std::size_t* decryptions = nullptr);

// Everything the client holds across sessions.
class ClientParty {
 public:
  ClientParty(ClientDataset data, std::optional<KeyPair> client_key);

  const ClientDataset& dataset() const { return data_; }
  bool has_client_key() const { return key_.has_value(); }
  const KeyPair& client_key() const;

  // Client-based setup.
  const ClientIndicatorState& BuildIndicator(Rng& rng);
  bool has_indicator() const { return indicator_.has_value(); }
  const ClientIndicatorState& indicator() const;
  IndicatorUpdate UpdateMembership(std::span<const UserId> changed_ids,
                                   std::uint64_t window_begin, std::uint64_t window_end,
                                   Rng& rng);

 private:
  ClientDataset data_;
  std::optional<KeyPair> key_;
  std::optional<ClientIndicatorState> indicator_;
};

}  // namespace locagg::client
