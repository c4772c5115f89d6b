#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "locagg/bytes.h"
#include "locagg/rng.h"

// Paillier cryptosystem with the additive homomorphic operations used by the
// query protocols. Plaintexts are integers in [0, m); ciphertexts are residues
// modulo m^2 that carry the identifier of the public key they belong to.
namespace locagg::paillier {

using KeyId = std::uint64_t;

class PaillierError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyMismatchError : public PaillierError {
 public:
  KeyMismatchError() : PaillierError("ciphertext belongs to a different public key") {}
};

class MalformedCiphertextError : public PaillierError {
 public:
  using PaillierError::PaillierError;
};

struct PublicKey {
  BigInt m;
  BigInt g;
  BigInt m_sq;
  KeyId id = 0;

  // Validates m >= 15 and gcd(g, m^2) = 1.
  static PublicKey Create(const BigInt& m, const BigInt& g);

  std::size_t bits() const { return mpz_sizeinbase(m.get_mpz_t(), 2); }
  bool uses_standard_base() const { return g == m + 1; }

  friend bool operator==(const PublicKey& a, const PublicKey& b) {
    return a.m == b.m && a.g == b.g;
  }
};

struct PrivateKey {
  BigInt lambda;
  BigInt mu;
  BigInt p;
  BigInt q;

  // CRT tables, derived from p and q.
  BigInt p_sq, q_sq;
  BigInt hp, hq;            // (L_p(g^(p-1) mod p^2))^-1 mod p, likewise for q
  BigInt q_inv_p;           // q^-1 mod p
  BigInt q_sq_inv_p_sq;     // (q^2)^-1 mod p^2
  BigInt noise_exp_p;       // q mod (p-1)
  BigInt noise_exp_q;       // p mod (q-1)
};

struct KeyPair {
  PublicKey pub;
  PrivateKey priv;

  // g defaults to m + 1.
  static KeyPair FromPrimes(const BigInt& p, const BigInt& q,
                            std::optional<BigInt> g = std::nullopt);
};

struct Ciphertext {
  BigInt value;
  KeyId key_id = 0;

  friend bool operator==(const Ciphertext& a, const Ciphertext& b) {
    return a.key_id == b.key_id && a.value == b.value;
  }
};

// Ciphertext together with the randomizer r used to produce it.
struct TrackedCiphertext {
  Ciphertext ct;
  BigInt randomizer;
};

// Generates m = p*q with exactly `bits` bits, p != q prime and
// gcd(m, (p-1)(q-1)) = 1. Rejects bits < 4.
KeyPair GenerateKeyPair(std::size_t bits, Rng& rng);

// Uniform r in [1, m) with gcd(r, m) = 1.
BigInt SampleRandomizer(const PublicKey& pk, Rng& rng);

Ciphertext EncryptWithRandomizer(const PublicKey& pk, const BigInt& x, const BigInt& r);
Ciphertext Encrypt(const PublicKey& pk, const BigInt& x, Rng& rng);
TrackedCiphertext EncryptTracked(const PublicKey& pk, const BigInt& x, Rng& rng);

// Same distribution as the public-key versions, computed with the factorization.
Ciphertext Encrypt(const KeyPair& kp, const BigInt& x, Rng& rng);
TrackedCiphertext EncryptTracked(const KeyPair& kp, const BigInt& x, Rng& rng);

// CRT decryption.
BigInt Decrypt(const KeyPair& kp, const Ciphertext& c);
// D(c) = L(c^lambda mod m^2) * mu mod m, evaluated literally.
BigInt DecryptTextbook(const KeyPair& kp, const Ciphertext& c);

Ciphertext Add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b);
Ciphertext ScalarMul(const PublicKey& pk, const Ciphertext& a, const BigInt& k);
Ciphertext Rerandomize(const PublicKey& pk, const Ciphertext& a, Rng& rng);
// Encrypts (-x) mod m by inverting the ciphertext modulo m^2.
Ciphertext Negate(const PublicKey& pk, const Ciphertext& a);

// The ciphertext with value 1: a deterministic encryption of zero, used as the
// identity of homomorphic products. Never sent to another party as is.
Ciphertext Identity(const PublicKey& pk);

void CheckCiphertext(const PublicKey& pk, const Ciphertext& c);

// Length-prefixed big-endian encodings.
Bytes SerializeCiphertext(const Ciphertext& c);
Ciphertext DeserializeCiphertext(const PublicKey& pk, std::span<const std::uint8_t> bytes);
Bytes SerializePublicKey(const PublicKey& pk);
PublicKey DeserializePublicKey(std::span<const std::uint8_t> bytes);

void WritePublicKey(ByteWriter& w, const PublicKey& pk);
PublicKey ReadPublicKey(ByteReader& r);

}  // namespace locagg::paillier
