#include <gtest/gtest.h>

#include <set>

#include "locagg/paillier.h"
#include "test_support.h"

namespace locagg::paillier {
namespace {

using testing::TestKey;
using testing::TinyKey;

TEST(Paillier, TinyKeyParameters) {
  const auto& kp = TinyKey();
  EXPECT_EQ(kp.pub.m, 35);
  EXPECT_EQ(kp.pub.g, 36);
  EXPECT_EQ(kp.pub.m_sq, 1225);
  EXPECT_EQ(kp.priv.lambda, 12);
  // mu * L(g^lambda mod m^2) == 1 mod m
  BigInt u;
  mpz_powm(u.get_mpz_t(), kp.pub.g.get_mpz_t(), kp.priv.lambda.get_mpz_t(), kp.pub.m_sq.get_mpz_t());
  const BigInt l = (u - 1) / kp.pub.m;
  EXPECT_EQ((kp.priv.mu * l) % kp.pub.m, 1);
}

TEST(Paillier, EqualPrimesRejected) {
  EXPECT_ANY_THROW(KeyPair::FromPrimes(7, 7));
}

TEST(Paillier, TooFewBitsRejected) {
  Rng rng(1);
  EXPECT_ANY_THROW(GenerateKeyPair(3, rng));
}

TEST(Paillier, GeneratedKeyShape) {
  for (std::size_t bits : {6u, 16u, 64u, 256u}) {
    Rng rng(bits);
    const auto kp = GenerateKeyPair(bits, rng);
    EXPECT_EQ(kp.pub.bits(), bits);
    EXPECT_NE(kp.priv.p, kp.priv.q);
    EXPECT_EQ(kp.priv.p * kp.priv.q, kp.pub.m);
    EXPECT_NE(mpz_probab_prime_p(kp.priv.p.get_mpz_t(), 30), 0);
    EXPECT_NE(mpz_probab_prime_p(kp.priv.q.get_mpz_t(), 30), 0);
    BigInt phi = (kp.priv.p - 1) * (kp.priv.q - 1), g;
    mpz_gcd(g.get_mpz_t(), phi.get_mpz_t(), kp.pub.m.get_mpz_t());
    EXPECT_EQ(g, 1);
    EXPECT_TRUE(kp.pub.uses_standard_base());
  }
}

TEST(Paillier, FixedRandomizerVector) {
  const auto& kp = TinyKey();
  const Ciphertext c = EncryptWithRandomizer(kp.pub, 7, 2);
  // 36^7 * 2^35 mod 1225, evaluated independently.
  BigInt a, b;
  mpz_powm_ui(a.get_mpz_t(), BigInt(36).get_mpz_t(), 7, BigInt(1225).get_mpz_t());
  mpz_powm_ui(b.get_mpz_t(), BigInt(2).get_mpz_t(), 35, BigInt(1225).get_mpz_t());
  const BigInt expected = (a * b) % 1225;
  EXPECT_EQ(expected, 753);
  EXPECT_EQ(c.value, expected);
  EXPECT_EQ(Decrypt(kp, c), 7);
}

TEST(Paillier, ExhaustiveRoundTripTinyKey) {
  const auto& kp = TinyKey();
  Rng rng(2);
  for (int x = 0; x < 35; ++x) {
    for (int r = 1; r < 35; ++r) {
      if (std::gcd(r, 35) != 1) continue;
      const Ciphertext c = EncryptWithRandomizer(kp.pub, x, r);
      ASSERT_EQ(Decrypt(kp, c), x);
      ASSERT_EQ(DecryptTextbook(kp, c), x);
    }
    ASSERT_EQ(Decrypt(kp, Encrypt(kp, BigInt(x), rng)), x);
    ASSERT_EQ(Decrypt(kp, Encrypt(kp.pub, BigInt(x), rng)), x);
  }
}

TEST(Paillier, ExhaustiveHomomorphismTinyKey) {
  const auto& kp = TinyKey();
  Rng rng(3);
  for (int x = 0; x < 35; ++x) {
    for (int y = 0; y < 35; ++y) {
      const auto cx = Encrypt(kp.pub, BigInt(x), rng);
      const auto cy = Encrypt(kp.pub, BigInt(y), rng);
      ASSERT_EQ(Decrypt(kp, Add(kp.pub, cx, cy)), (x + y) % 35);
      ASSERT_EQ(Decrypt(kp, ScalarMul(kp.pub, cx, y)), (x * y) % 35);
    }
  }
}

TEST(Paillier, CrtEncryptionMatchesPublicFormula) {
  const auto& kp = TestKey(256);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const BigInt x = rng.UniformBelow(kp.pub.m);
    const auto t = EncryptTracked(kp, x, rng);
    EXPECT_EQ(t.ct, EncryptWithRandomizer(kp.pub, x, t.randomizer));
  }
}

TEST(Paillier, KeyOwnerEncryptionUniformOverRandomizers) {
  const auto& kp = TinyKey();
  std::map<BigInt, int> expected;
  for (int r = 1; r < 35; ++r) {
    if (std::gcd(r, 35) == 1) expected[EncryptWithRandomizer(kp.pub, 0, r).value] = 0;
  }
  ASSERT_EQ(expected.size(), 24u);
  Rng rng(41);
  constexpr int kDraws = 24'000;
  for (int i = 0; i < kDraws; ++i) {
    const auto c = Encrypt(kp, 0, rng);
    ASSERT_TRUE(expected.count(c.value)) << c.value;
    ++expected[c.value];
    ASSERT_EQ(Decrypt(kp, Encrypt(kp, i % 35, rng)), i % 35);
  }
  // Chi-square with 23 degrees of freedom; 0.999 quantile ~ 49.7.
  double chi2 = 0;
  for (const auto& [v, n] : expected) chi2 += (n - 1000.0) * (n - 1000.0) / 1000.0;
  EXPECT_LT(chi2, 49.7);
}

TEST(Paillier, RoundTrip1024) {
  const auto& kp = TestKey(1024);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const BigInt x = rng.UniformBelow(kp.pub.m);
    ASSERT_EQ(Decrypt(kp, Encrypt(kp.pub, x, rng)), x);
  }
}

TEST(Paillier, SemanticRandomization) {
  const auto& kp = TestKey(256);
  Rng rng(6);
  EXPECT_NE(Encrypt(kp.pub, 7, rng).value, Encrypt(kp.pub, 7, rng).value);
  EXPECT_EQ(Decrypt(kp, Encrypt(kp.pub, 0, rng)), 0);
}

TEST(Paillier, NamedExamples) {
  const auto& kp = TestKey(256);
  const auto& pk = kp.pub;
  Rng rng(7);
  auto E = [&](const BigInt& x) { return Encrypt(pk, x, rng); };
  EXPECT_EQ(Decrypt(kp, Add(pk, E(1), E(2))), 3);
  EXPECT_EQ(Decrypt(kp, Add(pk, E(pk.m - 1), E(1))), 0);
  EXPECT_EQ(Decrypt(kp, Add(pk, E(0), E(0))), 0);
  EXPECT_EQ(Decrypt(kp, ScalarMul(pk, E(3), 4)), 12);
  EXPECT_EQ(Decrypt(kp, ScalarMul(pk, E(9), 1)), 9);
  EXPECT_EQ(Decrypt(kp, Add(pk, E(7), Negate(pk, E(7)))), 0);
  EXPECT_EQ(Decrypt(kp, Negate(pk, E(0))), 0);
  EXPECT_EQ(Decrypt(kp, Add(pk, E(10), Negate(pk, E(3)))), 7);
  const auto x = E(42);
  const auto y = Add(pk, x, E(0));
  EXPECT_NE(x.value, y.value);
  EXPECT_EQ(Decrypt(kp, y), 42);
}

TEST(Paillier, HomomorphicLaws1024) {
  const auto& kp = TestKey(1024);
  const auto& pk = kp.pub;
  Rng rng(8);
  int failures = 0;
  for (int i = 0; i < 10'000; ++i) {
    const BigInt x = rng.UniformBelow(pk.m), y = rng.UniformBelow(pk.m);
    const BigInt k = rng.UniformU64(1u << 16);
    // Encrypt by the key owner, decrypt by CRT: both independent of Add/ScalarMul.
    const auto cx = Encrypt(kp, x, rng), cy = Encrypt(kp, y, rng);
    if (Decrypt(kp, Add(pk, cx, cy)) != (x + y) % pk.m) ++failures;
    if (Decrypt(kp, ScalarMul(pk, cx, k)) != (x * k) % pk.m) ++failures;
  }
  EXPECT_EQ(failures, 0);
}

TEST(Paillier, ZeroPreservation) {
  const auto& kp = TestKey(256);
  Rng rng(9);
  const auto zero = Encrypt(kp.pub, 0, rng);
  for (int i = 0; i < 200; ++i) {
    EXPECT_EQ(Decrypt(kp, ScalarMul(kp.pub, zero, rng.RandomBits(64))), 0);
  }
}

TEST(Paillier, Rerandomization) {
  const auto& kp = TestKey(256);
  Rng rng(10);
  const auto c = Encrypt(kp.pub, 5, rng);
  std::set<BigInt> seen;
  for (int i = 0; i < 100; ++i) {
    const auto r = Rerandomize(kp.pub, c, rng);
    EXPECT_EQ(Decrypt(kp, r), 5);
    seen.insert(r.value);
  }
  EXPECT_EQ(seen.size(), 100u);
  auto chain = c;
  for (int i = 0; i < 10; ++i) chain = Rerandomize(kp.pub, chain, rng);
  EXPECT_EQ(Decrypt(kp, chain), 5);
}

TEST(Paillier, CiphertextsInGroup) {
  const auto& kp = TestKey(256);
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const auto c = Encrypt(kp.pub, rng.UniformBelow(kp.pub.m), rng);
    EXPECT_GE(c.value, 0);
    EXPECT_LT(c.value, kp.pub.m_sq);
    BigInt g;
    mpz_gcd(g.get_mpz_t(), c.value.get_mpz_t(), kp.pub.m_sq.get_mpz_t());
    EXPECT_EQ(g, 1);
  }
}

TEST(Paillier, MalformedAndMismatchedInputs) {
  const auto& kp = TinyKey();
  Rng rng(12);
  EXPECT_THROW(Decrypt(kp, Ciphertext{BigInt(5), kp.pub.id}), MalformedCiphertextError);
  EXPECT_THROW(Decrypt(kp, Ciphertext{BigInt(1225), kp.pub.id}), MalformedCiphertextError);
  EXPECT_ANY_THROW(Encrypt(kp.pub, 35, rng));
  EXPECT_ANY_THROW(Encrypt(kp.pub, -1, rng));
  const auto& other = TestKey(64);
  const auto a = Encrypt(kp.pub, 1, rng);
  const auto b = Encrypt(other.pub, 1, rng);
  EXPECT_THROW(Add(kp.pub, a, b), KeyMismatchError);
  EXPECT_THROW(Negate(kp.pub, Ciphertext{BigInt(7), kp.pub.id}), PaillierError);
}

TEST(Paillier, AlternativeBase) {
  // g = 141 (another valid base for m = 35).
  const auto kp = KeyPair::FromPrimes(5, 7, BigInt(141));
  Rng rng(13);
  for (int x = 0; x < 35; ++x) ASSERT_EQ(Decrypt(kp, Encrypt(kp.pub, BigInt(x), rng)), x);
}

TEST(Paillier, SerializationBitExact) {
  const auto& kp = TinyKey();
  const auto c = EncryptWithRandomizer(kp.pub, 7, 2);  // 753 = 0x02f1
  EXPECT_EQ(SerializeCiphertext(c), (Bytes{0, 0, 0, 2, 0x02, 0xf1}));
  EXPECT_EQ(SerializePublicKey(kp.pub), (Bytes{0, 0, 0, 1, 35, 0, 0, 0, 1, 36}));
  EXPECT_EQ(DeserializeCiphertext(kp.pub, SerializeCiphertext(c)), c);
  EXPECT_EQ(DeserializePublicKey(SerializePublicKey(kp.pub)), kp.pub);
  EXPECT_EQ(DeserializePublicKey(SerializePublicKey(kp.pub)).id, kp.pub.id);
  EXPECT_ANY_THROW(DeserializeCiphertext(kp.pub, Bytes{0, 0, 0, 2, 0x04}));
  EXPECT_ANY_THROW(DeserializeCiphertext(kp.pub, Bytes{0, 0, 0, 2, 0x00, 0x04}));
}

}  // namespace
}  // namespace locagg::paillier
