#pragma once

#include <cstdint>
#include <vector>

#include "locagg/paillier.h"

namespace locagg {

// Row-major table of ciphertexts, one row per facility (or bucket), one column
// per superset index.
using EncryptedMatrix = std::vector<std::vector<paillier::Ciphertext>>;

// The client's per-superset-index encryptions of membership, as held by the
// server after setup.
struct EncryptedIndicatorVector {
  std::vector<paillier::Ciphertext> entries;
  std::uint64_t declared_count = 0;  // n_c
  BigInt combined_randomizer;        // product of all r_i mod m_c
  bool verified = false;
};

}  // namespace locagg
