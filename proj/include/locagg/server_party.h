#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "locagg/encrypted.h"
#include "locagg/geo.h"
#include "locagg/paillier.h"
#include "locagg/query.h"
#include "locagg/rng.h"

// The server role: facility validation, nearest-facility assignment, the
// encrypted tables of the server-based protocols, the homomorphic aggregates
// of the client-based protocols, masked-result decryption and noise.
namespace locagg::server {

using paillier::Ciphertext;
using paillier::KeyPair;
using paillier::PublicKey;

struct ServerConfig {
  std::uint32_t theta1 = 1;  // max new facilities per query
  std::uint32_t theta2 = 0;  // max removed existing facilities per query
  std::uint64_t min_client_users = 100;
  std::optional<double> epsilon;
  Metric metric = Metric::kEuclidean;
  std::int32_t max_coordinate = kDefaultMaxCoordinate;
  double w_range_factor = 2.0;
  // Requires moduli of at least 1024 bits for both parties.
  bool production = false;

  void Validate() const;
};

inline constexpr std::size_t kProductionKeyBits = 1024;

struct ServerDataset {
  std::uint64_t superset_size = 0;  // n
  std::vector<UserRecord> users;    // U_S with locations

  // Ids unique and < n, coordinates in range.
  void Validate(std::int32_t max_coordinate) const;
};

// Threat-model gate run before any computation on a query.
std::optional<Abort> ValidateFacilities(const FacilitySet& fs,
                                        std::span<const Location> known_existing,
                                        const ServerConfig& cfg);

struct ServerAssignmentState {
  std::vector<Assignment> per_user;  // aligned with ServerDataset::users
  std::int64_t max_distance = 0;     // 0 when there are no users
};

ServerAssignmentState AssignUsers(const ServerDataset& data,
                                  std::span<const Location> facilities, Metric metric);

// Precomputed E(0) and E(1) values. Each entry is handed out once.
class EncryptionPool {
 public:
  EncryptionPool() = default;

  void Fill(const KeyPair& kp, std::size_t zeros, std::size_t ones, Rng& rng);
  std::optional<Ciphertext> TakeZero();
  std::optional<Ciphertext> TakeOne();
  std::size_t zeros_left() const;
  std::size_t ones_left() const;

 private:
  mutable std::mutex mu_;
  std::vector<Ciphertext> zeros_;
  std::vector<Ciphertext> ones_;
};

// Produces table entries under the server's own key, drawing from a pool
// when one is attached and it still has entries.
class TableEncryptor {
 public:
  TableEncryptor(const KeyPair& kp, Rng& rng, EncryptionPool* pool = nullptr)
      : kp_(kp), rng_(rng), pool_(pool) {}

  Ciphertext Zero();
  Ciphertext One();
  Ciphertext Encrypt(const BigInt& x);
  std::size_t fresh_encryptions() const { return fresh_; }

 private:
  const KeyPair& kp_;
  Rng& rng_;
  EncryptionPool* pool_;
  std::size_t fresh_ = 0;
};

// facility_count rows x n columns; (j, i) = E(1) iff U_i is a server user whose
// nearest facility is j.
EncryptedMatrix BuildRnnqTable(const ServerDataset& data, const ServerAssignmentState& state,
                               std::size_t facility_count, TableEncryptor& enc);

// Row 0: E(d_i) for server users, E(0) otherwise. Row 1: membership E(1)/E(0).
EncryptedMatrix BuildAvgqTable(const ServerDataset& data, const ServerAssignmentState& state,
                               TableEncryptor& enc);

// Uniform in [max + 1, max(max + 1, floor(factor * max))].
std::int64_t DrawW(std::int64_t max_distance, double factor, Rng& rng);

struct MaxqTable {
  std::int64_t w = 0;
  EncryptedMatrix rows;  // w + 1 rows, row j = bucket of distance j
};

MaxqTable BuildMaxqTable(const ServerDataset& data, const ServerAssignmentState& state,
                         TableEncryptor& enc, Rng& rng, double w_range_factor);

// Laplace noise for the entries of a query answer, in entry order. Empty when
// differential privacy is off. max_distance is the AVGQ total sensitivity.
std::vector<std::int64_t> DrawNoise(QueryKind kind, std::size_t entries,
                                    std::int64_t max_distance,
                                    std::optional<double> epsilon, Rng& noise_rng);

// Server-based step 8: decrypt masked values, add signed noise mod m if given.
std::vector<BigInt> DecryptMasked(const KeyPair& kp, std::span<const Ciphertext> masked,
                                  std::span<const std::int64_t> noise = {});

// Checks prod(entries) == g^{n_c} * r^m mod m^2 and n_c >= min_client_users.
// Marks the vector verified on success.
std::optional<Abort> VerifyIndicatorVector(EncryptedIndicatorVector& vec, const PublicKey& pk,
                                           const ServerConfig& cfg);

// Homomorphic aggregates over the existing facility set. Values are raw group
// elements mod m_c^2; the empty product is 1.
struct AggregateCache {
  std::vector<Location> existing;
  ServerAssignmentState assignment;
  std::vector<BigInt> rnn;      // per existing facility: prod T_i over its users
  BigInt total;                 // prod T_i^{d_i}
  BigInt count;                 // prod T_i
  std::vector<BigInt> buckets;  // index = distance, 0..max_distance
  std::vector<std::size_t> bucket_population;  // server users per bucket
};

AggregateCache PrecomputeAggregates(const ServerDataset& data,
                                    const EncryptedIndicatorVector& vec, const PublicKey& pk,
                                    std::span<const Location> existing, Metric metric);

// Re-folds a replaced window of the indicator vector into the cache.
void ApplyIndicatorUpdate(AggregateCache& cache, const ServerDataset& data,
                          std::uint64_t offset, std::span<const Ciphertext> old_window,
                          std::span<const Ciphertext> new_window, const PublicKey& pk);

// Aggregates for one query's facility set, before anonymisation.
struct QueryAggregates {
  std::vector<BigInt> rnn;      // per facility of the query
  BigInt total;
  BigInt count;
  std::vector<BigInt> buckets;  // 0..max_distance
  std::vector<std::size_t> bucket_population;
  std::int64_t max_distance = 0;
  // Work counters for the query itself.
  std::size_t reassigned_users = 0;
  std::size_t exponentiations = 0;
  std::size_t inversions = 0;
  bool incremental = false;
};

QueryAggregates AggregatesFromScratch(const ServerDataset& data,
                                      const EncryptedIndicatorVector& vec, const PublicKey& pk,
                                      std::span<const Location> facilities, Metric metric);

// Uses the cache when fs is the existing set, or the existing set plus one
// candidate (only users the candidate attracts are touched); falls back to a
// full computation otherwise.
QueryAggregates AggregatesForQuery(const AggregateCache& cache, const ServerDataset& data,
                                   const EncryptedIndicatorVector& vec, const PublicKey& pk,
                                   const FacilitySet& fs, Metric metric);

// Client-based steps 3-4. Each output is multiplied by a fresh E(0), or by
// E(noise) when epsilon is set.
std::vector<Ciphertext> RnnqClientAnswer(const QueryAggregates& agg, const PublicKey& pk,
                                         std::optional<double> epsilon, Rng& rng,
                                         Rng& noise_rng);

// (total, count).
std::array<Ciphertext, 2> AvgqClientAnswer(const QueryAggregates& agg, const PublicKey& pk,
                                           std::optional<double> epsilon, Rng& rng,
                                           Rng& noise_rng);

struct MaxqAnswer {
  std::int64_t w = 0;
  std::vector<Ciphertext> buckets;  // w + 1 entries
  std::vector<BigInt> exponents;    // server-private v_j
};

// Buckets raised to secret v_j in [1, 2^64) coprime to m; buckets with no
// server user become fresh E(0).
MaxqAnswer MaxqClientAnswer(const QueryAggregates& agg, const PublicKey& pk,
                            std::optional<double> epsilon, double w_range_factor, Rng& rng,
                            Rng& noise_rng);

// State the client stored at setup.
struct ClientStore {
  PublicKey pk;
  EncryptedIndicatorVector vec;
  AggregateCache cache;
};

struct ServerTable {
  QueryKind kind;
  EncryptedMatrix rows;
  std::int64_t w = 0;             // MAXQ only
  std::int64_t max_distance = 0;  // needed again at step 8
};

struct ClientBasedAnswer {
  QueryKind kind;
  std::int64_t w = 0;
  std::vector<Ciphertext> cts;
  QueryAggregates aggregates;
};

// Everything the server holds across sessions. Thread-safe: the dataset and
// keys are immutable, the client store is swapped atomically, and the noise
// stream is drawn under a lock.
class ServerParty {
 public:
  ServerParty(ServerDataset data, std::vector<Location> known_existing, ServerConfig cfg,
              std::optional<KeyPair> server_key, std::uint64_t seed);

  const ServerConfig& config() const { return cfg_; }
  void set_epsilon(std::optional<double> epsilon);
  const ServerDataset& dataset() const { return data_; }
  std::span<const Location> known_existing() const { return known_existing_; }
  bool has_server_key() const { return server_key_.has_value(); }
  const KeyPair& server_key() const;

  // Offline E(0)/E(1) generation for the server-based tables.
  void PrecomputePool(std::size_t zeros, std::size_t ones);
  std::size_t pool_zeros_left() const;

  // Client-based setup: verify, then precompute aggregates.
  std::optional<Abort> InstallIndicatorVector(const PublicKey& pk, EncryptedIndicatorVector vec);
  std::optional<Abort> UpdateIndicatorWindow(std::uint64_t offset,
                                             std::vector<Ciphertext> window,
                                             std::uint64_t declared_count,
                                             const BigInt& combined_randomizer);
  std::shared_ptr<const ClientStore> client_store() const;

  // Server-based steps 2-3. Throws ProtocolAbort.
  ServerTable BuildTable(QueryKind kind, const FacilitySet& fs, Rng& rng);
  // Server-based step 8.
  struct Step8 {
    std::vector<BigInt> decrypted;     // what the server learns
    std::vector<std::int64_t> noise;   // empty without differential privacy
    std::vector<BigInt> returned;      // decrypted + noise mod m
  };
  Step8 DecryptStep8(QueryKind kind, std::span<const Ciphertext> masked,
                     std::int64_t max_distance);
  // Client-based steps 2-4. Throws ProtocolAbort.
  ClientBasedAnswer AnswerClientBased(QueryKind kind, const FacilitySet& fs, Rng& rng);

  Rng ForkSessionRng();

  // Total epsilon of all noisy answers so far (sequential composition).
  // Informational; nothing is refused once it grows.
  double epsilon_spent() const;

  // Seed of the Laplace noise stream of a party constructed with `seed`.
  static std::uint64_t NoiseSeedFor(std::uint64_t seed);

 private:
  void CheckFacilities(const FacilitySet& fs) const;
  void CheckKeyStrength(const PublicKey& pk) const;
  void ChargeEpsilon(QueryKind kind);  // caller holds mu_

  ServerDataset data_;
  std::vector<Location> known_existing_;
  ServerConfig cfg_;
  std::optional<KeyPair> server_key_;

  mutable std::mutex mu_;
  Rng rng_;
  Rng noise_rng_;
  EncryptionPool pool_;
  std::shared_ptr<const ClientStore> store_;
  double epsilon_spent_ = 0;
};

}  // namespace locagg::server
