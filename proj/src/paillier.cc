#include "locagg/paillier.h"

#include <sodium.h>

namespace locagg::paillier {
namespace {

BigInt Gcd(const BigInt& a, const BigInt& b) {
  BigInt out;
  mpz_gcd(out.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return out;
}

BigInt Lcm(const BigInt& a, const BigInt& b) {
  BigInt out;
  mpz_lcm(out.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return out;
}

BigInt PowMod(const BigInt& base, const BigInt& exp, const BigInt& mod) {
  BigInt out;
  mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return out;
}

std::optional<BigInt> InvertMod(const BigInt& a, const BigInt& mod) {
  BigInt out;
  if (mpz_invert(out.get_mpz_t(), a.get_mpz_t(), mod.get_mpz_t()) == 0) return std::nullopt;
  return out;
}

std::size_t BitLength(const BigInt& v) { return mpz_sizeinbase(v.get_mpz_t(), 2); }

bool IsPrime(const BigInt& v) { return mpz_probab_prime_p(v.get_mpz_t(), 40) > 0; }

KeyId DeriveKeyId(const BigInt& m, const BigInt& g) {
  ByteWriter w;
  w.Big(m);
  w.Big(g);
  std::uint8_t digest[8];
  crypto_generichash(digest, sizeof digest, w.bytes().data(), w.bytes().size(), nullptr, 0);
  KeyId id = 0;
  for (std::uint8_t b : digest) id = (id << 8) | b;
  return id;
}

// Smallest prime >= a random start with exactly `bits` bits.
BigInt RandomPrime(std::size_t bits, Rng& rng) {
  while (true) {
    BigInt start = rng.RandomBits(bits);
    mpz_setbit(start.get_mpz_t(), bits - 1);
    if (bits >= 8) mpz_setbit(start.get_mpz_t(), bits - 2);
    BigInt below = start - 1;
    BigInt p;
    mpz_nextprime(p.get_mpz_t(), below.get_mpz_t());
    if (BitLength(p) == bits) return p;
  }
}

// g^x mod m^2; g = m + 1 reduces to 1 + x*m.
BigInt BasePower(const PublicKey& pk, const BigInt& x) {
  if (pk.uses_standard_base()) {
    BigInt out = x * pk.m + 1;
    return out % pk.m_sq;
  }
  return PowMod(pk.g, x, pk.m_sq);
}

void CheckPlaintext(const PublicKey& pk, const BigInt& x) {
  if (sgn(x) < 0 || x >= pk.m) throw PaillierError("plaintext outside [0, m)");
}

void CheckKey(const PublicKey& pk, const Ciphertext& c) {
  if (c.key_id != pk.id) throw KeyMismatchError();
}

BigInt CombineCrt(const PrivateKey& sk, const BigInt& xp, const BigInt& xq) {
  BigInt h = ((xp - xq) * sk.q_sq_inv_p_sq) % sk.p_sq;
  if (sgn(h) < 0) h += sk.p_sq;
  return xq + h * sk.q_sq;
}

// r^m mod m^2 via the CRT on p^2 and q^2. Mod p^2, r^m = (r^q)^p and a p-th
// power mod p^2 only depends on its base mod p.
BigInt NoisePowerCrt(const KeyPair& kp, const BigInt& r) {
  const PrivateKey& sk = kp.priv;
  return CombineCrt(sk, PowMod(PowMod(r % sk.p, sk.noise_exp_p, sk.p), sk.p, sk.p_sq),
                    PowMod(PowMod(r % sk.q, sk.noise_exp_q, sk.q), sk.q, sk.q_sq));
}

// r^m mod m^2 for a uniform unit r, without r itself: q is prime to p - 1, so
// r^q mod p is a uniform unit mod p, and likewise for q.
BigInt RandomNoisePowerCrt(const KeyPair& kp, Rng& rng) {
  const PrivateKey& sk = kp.priv;
  const BigInt yp = rng.UniformBelow(sk.p - 1) + 1;
  const BigInt yq = rng.UniformBelow(sk.q - 1) + 1;
  return CombineCrt(sk, PowMod(yp, sk.p, sk.p_sq), PowMod(yq, sk.q, sk.q_sq));
}

BigInt LFunction(const BigInt& u, const BigInt& n) { return (u - 1) / n; }

}  // namespace

PublicKey PublicKey::Create(const BigInt& m, const BigInt& g) {
  if (m < 15) throw PaillierError("modulus must be at least 15");
  PublicKey pk;
  pk.m = m;
  pk.m_sq = m * m;
  if (sgn(g) <= 0 || g >= pk.m_sq) throw PaillierError("base outside [1, m^2)");
  if (Gcd(g, pk.m_sq) != 1) throw PaillierError("base not coprime to m^2");
  pk.g = g;
  pk.id = DeriveKeyId(m, g);
  return pk;
}

KeyPair KeyPair::FromPrimes(const BigInt& p, const BigInt& q, std::optional<BigInt> g) {
  if (p == q) throw PaillierError("p and q must be distinct");
  if (!IsPrime(p) || !IsPrime(q)) throw PaillierError("p and q must be prime");
  const BigInt m = p * q;
  const BigInt phi = (p - 1) * (q - 1);
  if (Gcd(m, phi) != 1) throw PaillierError("gcd(m, (p-1)(q-1)) != 1");

  KeyPair kp;
  kp.pub = PublicKey::Create(m, g.value_or(m + 1));
  PrivateKey& sk = kp.priv;
  sk.p = p;
  sk.q = q;
  sk.lambda = Lcm(p - 1, q - 1);
  const BigInt u = PowMod(kp.pub.g, sk.lambda, kp.pub.m_sq);
  auto mu = InvertMod(LFunction(u, m), m);
  if (!mu) throw PaillierError("L(g^lambda mod m^2) is not invertible; invalid base");
  sk.mu = *mu;

  sk.p_sq = p * p;
  sk.q_sq = q * q;
  auto hp = InvertMod(LFunction(PowMod(kp.pub.g, p - 1, sk.p_sq), p), p);
  auto hq = InvertMod(LFunction(PowMod(kp.pub.g, q - 1, sk.q_sq), q), q);
  auto q_inv_p = InvertMod(q, p);
  auto q_sq_inv = InvertMod(sk.q_sq, sk.p_sq);
  if (!hp || !hq || !q_inv_p || !q_sq_inv) throw PaillierError("invalid base for CRT decryption");
  sk.hp = *hp;
  sk.hq = *hq;
  sk.q_inv_p = *q_inv_p;
  sk.q_sq_inv_p_sq = *q_sq_inv;
  sk.noise_exp_p = q % (p - 1);
  sk.noise_exp_q = p % (q - 1);
  return kp;
}

KeyPair GenerateKeyPair(std::size_t bits, Rng& rng) {
  if (bits < 4) throw PaillierError("key size too small to find two distinct primes");
  constexpr int kMaxAttempts = 100000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::size_t p_bits = (bits + 1) / 2;
    // Tiny keys need the flexibility of an extra bit on q (e.g. 15 = 3 * 5).
    const std::size_t q_bits = bits - p_bits + (bits < 16 ? rng.UniformU64(2) : 0);
    if (q_bits < 2) continue;
    const BigInt p = RandomPrime(p_bits, rng);
    const BigInt q = RandomPrime(q_bits, rng);
    if (p == q) continue;
    const BigInt m = p * q;
    if (BitLength(m) != bits) continue;
    if (Gcd(m, (p - 1) * (q - 1)) != 1) continue;
    return KeyPair::FromPrimes(p, q);
  }
  throw PaillierError("could not find suitable primes for the requested key size");
}

BigInt SampleRandomizer(const PublicKey& pk, Rng& rng) {
  while (true) {
    BigInt r = rng.UniformBelow(pk.m);
    if (sgn(r) != 0 && Gcd(r, pk.m) == 1) return r;
  }
}

Ciphertext EncryptWithRandomizer(const PublicKey& pk, const BigInt& x, const BigInt& r) {
  CheckPlaintext(pk, x);
  if (sgn(r) <= 0 || r >= pk.m || Gcd(r, pk.m) != 1) {
    throw PaillierError("randomizer must be a unit in [1, m)");
  }
  BigInt v = BasePower(pk, x) * PowMod(r, pk.m, pk.m_sq);
  v %= pk.m_sq;
  return Ciphertext{std::move(v), pk.id};
}

TrackedCiphertext EncryptTracked(const PublicKey& pk, const BigInt& x, Rng& rng) {
  BigInt r = SampleRandomizer(pk, rng);
  Ciphertext ct = EncryptWithRandomizer(pk, x, r);
  return TrackedCiphertext{std::move(ct), std::move(r)};
}

Ciphertext Encrypt(const PublicKey& pk, const BigInt& x, Rng& rng) {
  return EncryptTracked(pk, x, rng).ct;
}

TrackedCiphertext EncryptTracked(const KeyPair& kp, const BigInt& x, Rng& rng) {
  const PublicKey& pk = kp.pub;
  CheckPlaintext(pk, x);
  BigInt r = SampleRandomizer(pk, rng);
  BigInt v = BasePower(pk, x) * NoisePowerCrt(kp, r);
  v %= pk.m_sq;
  return TrackedCiphertext{Ciphertext{std::move(v), pk.id}, std::move(r)};
}

Ciphertext Encrypt(const KeyPair& kp, const BigInt& x, Rng& rng) {
  const PublicKey& pk = kp.pub;
  CheckPlaintext(pk, x);
  BigInt v = BasePower(pk, x) * RandomNoisePowerCrt(kp, rng);
  v %= pk.m_sq;
  return Ciphertext{std::move(v), pk.id};
}

void CheckCiphertext(const PublicKey& pk, const Ciphertext& c) {
  CheckKey(pk, c);
  if (sgn(c.value) < 0 || c.value >= pk.m_sq) {
    throw MalformedCiphertextError("ciphertext outside [0, m^2)");
  }
  if (Gcd(c.value, pk.m) != 1) throw MalformedCiphertextError("ciphertext not coprime to m^2");
}

BigInt Decrypt(const KeyPair& kp, const Ciphertext& c) {
  CheckCiphertext(kp.pub, c);
  const PrivateKey& sk = kp.priv;
  BigInt mp = (LFunction(PowMod(c.value, sk.p - 1, sk.p_sq), sk.p) * sk.hp) % sk.p;
  BigInt mq = (LFunction(PowMod(c.value, sk.q - 1, sk.q_sq), sk.q) * sk.hq) % sk.q;
  BigInt h = ((mp - mq) * sk.q_inv_p) % sk.p;
  if (sgn(h) < 0) h += sk.p;
  return mq + h * sk.q;
}

BigInt DecryptTextbook(const KeyPair& kp, const Ciphertext& c) {
  CheckCiphertext(kp.pub, c);
  const PublicKey& pk = kp.pub;
  const BigInt u = PowMod(c.value, kp.priv.lambda, pk.m_sq);
  return (LFunction(u, pk.m) * kp.priv.mu) % pk.m;
}

Ciphertext Add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  CheckKey(pk, a);
  CheckKey(pk, b);
  BigInt v = a.value * b.value;
  v %= pk.m_sq;
  return Ciphertext{std::move(v), pk.id};
}

Ciphertext ScalarMul(const PublicKey& pk, const Ciphertext& a, const BigInt& k) {
  CheckKey(pk, a);
  if (sgn(k) < 0) throw PaillierError("scalar must be non-negative");
  return Ciphertext{PowMod(a.value, k, pk.m_sq), pk.id};
}

Ciphertext Rerandomize(const PublicKey& pk, const Ciphertext& a, Rng& rng) {
  return Add(pk, a, Encrypt(pk, BigInt(0), rng));
}

Ciphertext Negate(const PublicKey& pk, const Ciphertext& a) {
  CheckKey(pk, a);
  auto inv = InvertMod(a.value, pk.m_sq);
  if (!inv) throw MalformedCiphertextError("ciphertext is not invertible modulo m^2");
  return Ciphertext{std::move(*inv), pk.id};
}

Ciphertext Identity(const PublicKey& pk) { return Ciphertext{BigInt(1), pk.id}; }

Bytes SerializeCiphertext(const Ciphertext& c) {
  ByteWriter w;
  w.Big(c.value);
  return std::move(w).Take();
}

Ciphertext DeserializeCiphertext(const PublicKey& pk, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Ciphertext c{r.Big(), pk.id};
  r.ExpectEnd();
  return c;
}

void WritePublicKey(ByteWriter& w, const PublicKey& pk) {
  w.Big(pk.m);
  w.Big(pk.g);
}

PublicKey ReadPublicKey(ByteReader& r) {
  BigInt m = r.Big();
  BigInt g = r.Big();
  return PublicKey::Create(m, g);
}

Bytes SerializePublicKey(const PublicKey& pk) {
  ByteWriter w;
  WritePublicKey(w, pk);
  return std::move(w).Take();
}

PublicKey DeserializePublicKey(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  PublicKey pk = ReadPublicKey(r);
  r.ExpectEnd();
  return pk;
}

}  // namespace locagg::paillier
