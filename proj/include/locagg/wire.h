#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "locagg/bytes.h"
#include "locagg/geo.h"
#include "locagg/paillier.h"
#include "locagg/query.h"

// Framed messages exchanged by the two parties.
//
//   frame = u32 length (big-endian, bytes after this field)
//         | u8 type tag | 16-byte session id | payload
namespace locagg::wire {

enum class MessageType : std::uint8_t {
  kHello = 1,
  kSetupParams = 2,
  kIndicatorVector = 3,
  kQueryRequest = 4,
  kEncTable = 5,
  kAggregated = 6,
  kMasked = 7,
  kMaskedPlaintexts = 8,
  kEncResult = 9,
  kAbort = 10,
  kDone = 11,
};

std::string_view MessageTypeName(MessageType type);

using SessionId = std::array<std::uint8_t, 16>;

inline constexpr std::size_t kLengthBytes = 4;
inline constexpr std::size_t kHeaderBytes = 1 + 16;
inline constexpr std::uint32_t kMaxFrameLength = 1u << 30;

struct Message {
  MessageType type = MessageType::kDone;
  SessionId session{};
  Bytes payload;

  friend bool operator==(const Message&, const Message&) = default;
};

class FrameError : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

Bytes EncodeFrame(const Message& msg);
// Decodes exactly one frame occupying all of `frame`.
Message DecodeFrame(std::span<const std::uint8_t> frame);
// Body length announced by a 4-byte prefix; throws past the cap.
std::uint32_t ReadFrameLength(std::span<const std::uint8_t, kLengthBytes> prefix);
// Tag and session id and payload, i.e. the bytes after the length prefix.
Message DecodeFrameBody(std::span<const std::uint8_t> body);

// Typed payloads.

inline constexpr std::uint8_t kProtocolVersion = 1;

struct Hello {
  std::uint8_t version = kProtocolVersion;
  Variant variant = Variant::kServerBased;
  friend bool operator==(const Hello&, const Hello&) = default;
};

struct SetupParams {
  std::uint64_t superset_size = 0;
  std::optional<paillier::PublicKey> server_key;  // server-based only
  std::vector<Location> existing;
  std::optional<double> epsilon;
  Metric metric = Metric::kEuclidean;
  std::int32_t max_coordinate = kDefaultMaxCoordinate;
  std::uint32_t theta1 = 0;
  std::uint32_t theta2 = 0;
  // Client-based: key id of the indicator vector the server already stores.
  std::optional<paillier::KeyId> stored_client_key;
  friend bool operator==(const SetupParams&, const SetupParams&) = default;
};

struct IndicatorVectorMsg {
  std::optional<paillier::PublicKey> client_key;  // present on the initial upload
  std::uint64_t offset = 0;
  std::uint64_t declared_count = 0;
  BigInt combined_randomizer;
  std::vector<BigInt> entries;
  friend bool operator==(const IndicatorVectorMsg&, const IndicatorVectorMsg&) = default;
};

struct QueryRequest {
  QueryKind kind = QueryKind::kRnn;
  std::uint32_t existing_count = 0;
  std::vector<Location> facilities;
  friend bool operator==(const QueryRequest&, const QueryRequest&) = default;
};

struct EncTable {
  std::int64_t w = 0;
  std::vector<std::vector<BigInt>> rows;
  friend bool operator==(const EncTable&, const EncTable&) = default;
};

// AGGREGATED, MASKED, MASKED_PLAINTEXTS.
struct ValueList {
  std::vector<BigInt> values;
  friend bool operator==(const ValueList&, const ValueList&) = default;
};

struct EncResult {
  std::int64_t w = 0;
  std::vector<BigInt> cts;
  friend bool operator==(const EncResult&, const EncResult&) = default;
};

struct AbortMsg {
  AbortCode code = AbortCode::kMalformed;
  std::uint8_t step = 0;
  std::string detail;
  friend bool operator==(const AbortMsg&, const AbortMsg&) = default;
};

Bytes Encode(const Hello& m);
Bytes Encode(const SetupParams& m);
Bytes Encode(const IndicatorVectorMsg& m);
Bytes Encode(const QueryRequest& m);
Bytes Encode(const EncTable& m);
Bytes Encode(const ValueList& m);
Bytes Encode(const EncResult& m);
Bytes Encode(const AbortMsg& m);

Hello DecodeHello(std::span<const std::uint8_t> p);
SetupParams DecodeSetupParams(std::span<const std::uint8_t> p);
IndicatorVectorMsg DecodeIndicatorVector(std::span<const std::uint8_t> p);
QueryRequest DecodeQueryRequest(std::span<const std::uint8_t> p);
EncTable DecodeEncTable(std::span<const std::uint8_t> p);
ValueList DecodeValueList(std::span<const std::uint8_t> p);
EncResult DecodeEncResult(std::span<const std::uint8_t> p);
AbortMsg DecodeAbort(std::span<const std::uint8_t> p);

// Number of ciphertexts (or masked plaintexts) a payload carries; 0 for
// messages without any.
std::size_t CountValues(const Message& msg);

std::vector<BigInt> Values(std::span<const paillier::Ciphertext> cts);
// Attaches pk's id; with `check`, rejects values that are not units mod m^2.
std::vector<paillier::Ciphertext> Ciphertexts(std::span<const BigInt> values,
                                              const paillier::PublicKey& pk, bool check = true);

// Indicator vector files: the INDICATOR_VECTOR frame that set it up.
void WriteIndicatorFile(const std::string& path, const IndicatorVectorMsg& msg);
IndicatorVectorMsg ReadIndicatorFile(const std::string& path);

}  // namespace locagg::wire
