#include "locagg/wire.h"

#include <cmath>
#include <fstream>
#include <iterator>

namespace locagg::wire {
namespace {

std::uint32_t CheckedCount(ByteReader& r, std::size_t min_item_bytes) {
  const std::uint32_t count = r.U32();
  if (static_cast<std::uint64_t>(count) * min_item_bytes > r.remaining()) {
    throw DecodeError("list count exceeds payload");
  }
  return count;
}

void WriteBigList(ByteWriter& w, std::span<const BigInt> values) {
  w.U32(static_cast<std::uint32_t>(values.size()));
  for (const BigInt& v : values) w.Big(v);
}

std::vector<BigInt> ReadBigList(ByteReader& r) {
  const std::uint32_t count = CheckedCount(r, 4);
  std::vector<BigInt> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(r.Big());
  return out;
}

void WriteLocations(ByteWriter& w, std::span<const Location> locs) {
  w.U32(static_cast<std::uint32_t>(locs.size()));
  for (const Location& l : locs) {
    w.I32(l.x);
    w.I32(l.y);
  }
}

std::vector<Location> ReadLocations(ByteReader& r) {
  const std::uint32_t count = CheckedCount(r, 8);
  std::vector<Location> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Location l;
    l.x = r.I32();
    l.y = r.I32();
    out.push_back(l);
  }
  return out;
}

void WriteOptionalKey(ByteWriter& w, const std::optional<paillier::PublicKey>& pk) {
  w.U8(pk ? 1 : 0);
  if (pk) paillier::WritePublicKey(w, *pk);
}

std::optional<paillier::PublicKey> ReadOptionalKey(ByteReader& r) {
  const std::uint8_t flag = r.U8();
  if (flag > 1) throw DecodeError("bad key flag");
  if (flag == 0) return std::nullopt;
  try {
    return paillier::ReadPublicKey(r);
  } catch (const paillier::PaillierError& e) {
    throw DecodeError(std::string("invalid public key: ") + e.what());
  }
}

bool ReadBool(ByteReader& r) {
  const std::uint8_t b = r.U8();
  if (b > 1) throw DecodeError("bad boolean");
  return b == 1;
}

template <typename T, typename F>
T Parse(std::span<const std::uint8_t> p, F&& body) {
  ByteReader r(p);
  T out = body(r);
  r.ExpectEnd();
  return out;
}

}  // namespace

std::string_view MessageTypeName(MessageType type) {
  switch (type) {
    case MessageType::kHello: return "HELLO";
    case MessageType::kSetupParams: return "SETUP_PARAMS";
    case MessageType::kIndicatorVector: return "INDICATOR_VECTOR";
    case MessageType::kQueryRequest: return "QUERY_REQUEST";
    case MessageType::kEncTable: return "ENC_TABLE";
    case MessageType::kAggregated: return "AGGREGATED";
    case MessageType::kMasked: return "MASKED";
    case MessageType::kMaskedPlaintexts: return "MASKED_PLAINTEXTS";
    case MessageType::kEncResult: return "ENC_RESULT";
    case MessageType::kAbort: return "ABORT";
    case MessageType::kDone: return "DONE";
  }
  return "UNKNOWN";
}

Bytes EncodeFrame(const Message& msg) {
  const std::size_t body = kHeaderBytes + msg.payload.size();
  if (body > kMaxFrameLength) throw FrameError("frame exceeds 1 GiB");
  ByteWriter w;
  w.U32(static_cast<std::uint32_t>(body));
  w.U8(static_cast<std::uint8_t>(msg.type));
  w.Raw(msg.session);
  w.Raw(msg.payload);
  return std::move(w).Take();
}

std::uint32_t ReadFrameLength(std::span<const std::uint8_t, kLengthBytes> prefix) {
  const std::uint32_t len = (std::uint32_t{prefix[0]} << 24) | (std::uint32_t{prefix[1]} << 16) |
                            (std::uint32_t{prefix[2]} << 8) | std::uint32_t{prefix[3]};
  if (len > kMaxFrameLength) throw FrameError("frame length over 1 GiB cap");
  if (len < kHeaderBytes) throw FrameError("frame shorter than its header");
  return len;
}

Message DecodeFrameBody(std::span<const std::uint8_t> body) {
  if (body.size() < kHeaderBytes) throw FrameError("truncated frame header");
  const std::uint8_t tag = body[0];
  if (tag < static_cast<std::uint8_t>(MessageType::kHello) ||
      tag > static_cast<std::uint8_t>(MessageType::kDone)) {
    throw FrameError("unknown message type " + std::to_string(tag));
  }
  Message msg;
  msg.type = static_cast<MessageType>(tag);
  std::copy(body.begin() + 1, body.begin() + kHeaderBytes, msg.session.begin());
  msg.payload.assign(body.begin() + kHeaderBytes, body.end());
  return msg;
}

Message DecodeFrame(std::span<const std::uint8_t> frame) {
  if (frame.size() < kLengthBytes) throw FrameError("truncated length prefix");
  const std::uint32_t len = ReadFrameLength(frame.first<kLengthBytes>());
  if (frame.size() - kLengthBytes != len) throw FrameError("frame length mismatch");
  return DecodeFrameBody(frame.subspan(kLengthBytes));
}

Bytes Encode(const Hello& m) {
  ByteWriter w;
  w.U8(m.version);
  w.U8(static_cast<std::uint8_t>(m.variant));
  return std::move(w).Take();
}

Hello DecodeHello(std::span<const std::uint8_t> p) {
  return Parse<Hello>(p, [](ByteReader& r) {
    Hello h;
    h.version = r.U8();
    if (h.version != kProtocolVersion) throw DecodeError("unsupported protocol version");
    const std::uint8_t v = r.U8();
    if (v != 1 && v != 2) throw DecodeError("unknown variant");
    h.variant = static_cast<Variant>(v);
    return h;
  });
}

Bytes Encode(const SetupParams& m) {
  ByteWriter w;
  w.U64(m.superset_size);
  WriteOptionalKey(w, m.server_key);
  WriteLocations(w, m.existing);
  w.U8(m.epsilon ? 1 : 0);
  w.F64(m.epsilon.value_or(0.0));
  w.U8(static_cast<std::uint8_t>(m.metric));
  w.I32(m.max_coordinate);
  w.U32(m.theta1);
  w.U32(m.theta2);
  w.U8(m.stored_client_key ? 1 : 0);
  w.U64(m.stored_client_key.value_or(0));
  return std::move(w).Take();
}

SetupParams DecodeSetupParams(std::span<const std::uint8_t> p) {
  return Parse<SetupParams>(p, [](ByteReader& r) {
    SetupParams s;
    s.superset_size = r.U64();
    s.server_key = ReadOptionalKey(r);
    s.existing = ReadLocations(r);
    const bool has_eps = ReadBool(r);
    const double eps = r.F64();
    if (has_eps) {
      if (!(eps > 0.0) || !std::isfinite(eps)) throw DecodeError("invalid epsilon");
      s.epsilon = eps;
    }
    const std::uint8_t metric = r.U8();
    if (metric > 1) throw DecodeError("unknown metric");
    s.metric = static_cast<Metric>(metric);
    s.max_coordinate = r.I32();
    s.theta1 = r.U32();
    s.theta2 = r.U32();
    const bool stored = ReadBool(r);
    const std::uint64_t key_id = r.U64();
    if (stored) s.stored_client_key = key_id;
    return s;
  });
}

Bytes Encode(const IndicatorVectorMsg& m) {
  ByteWriter w;
  WriteOptionalKey(w, m.client_key);
  w.U64(m.offset);
  w.U64(m.declared_count);
  w.Big(m.combined_randomizer);
  WriteBigList(w, m.entries);
  return std::move(w).Take();
}

IndicatorVectorMsg DecodeIndicatorVector(std::span<const std::uint8_t> p) {
  return Parse<IndicatorVectorMsg>(p, [](ByteReader& r) {
    IndicatorVectorMsg v;
    v.client_key = ReadOptionalKey(r);
    v.offset = r.U64();
    v.declared_count = r.U64();
    v.combined_randomizer = r.Big();
    v.entries = ReadBigList(r);
    return v;
  });
}

Bytes Encode(const QueryRequest& m) {
  ByteWriter w;
  w.U8(static_cast<std::uint8_t>(m.kind));
  w.U32(m.existing_count);
  WriteLocations(w, m.facilities);
  return std::move(w).Take();
}

QueryRequest DecodeQueryRequest(std::span<const std::uint8_t> p) {
  return Parse<QueryRequest>(p, [](ByteReader& r) {
    QueryRequest q;
    const std::uint8_t kind = r.U8();
    if (kind < 1 || kind > 3) throw DecodeError("unknown query kind");
    q.kind = static_cast<QueryKind>(kind);
    q.existing_count = r.U32();
    q.facilities = ReadLocations(r);
    if (q.existing_count > q.facilities.size()) throw DecodeError("existing count exceeds list");
    return q;
  });
}

Bytes Encode(const EncTable& m) {
  ByteWriter w;
  w.I64(m.w);
  w.U32(static_cast<std::uint32_t>(m.rows.size()));
  for (const auto& row : m.rows) WriteBigList(w, row);
  return std::move(w).Take();
}

EncTable DecodeEncTable(std::span<const std::uint8_t> p) {
  return Parse<EncTable>(p, [](ByteReader& r) {
    EncTable t;
    t.w = r.I64();
    const std::uint32_t rows = CheckedCount(r, 4);
    t.rows.reserve(rows);
    for (std::uint32_t i = 0; i < rows; ++i) t.rows.push_back(ReadBigList(r));
    return t;
  });
}

Bytes Encode(const ValueList& m) {
  ByteWriter w;
  WriteBigList(w, m.values);
  return std::move(w).Take();
}

ValueList DecodeValueList(std::span<const std::uint8_t> p) {
  return Parse<ValueList>(p, [](ByteReader& r) { return ValueList{ReadBigList(r)}; });
}

Bytes Encode(const EncResult& m) {
  ByteWriter w;
  w.I64(m.w);
  WriteBigList(w, m.cts);
  return std::move(w).Take();
}

EncResult DecodeEncResult(std::span<const std::uint8_t> p) {
  return Parse<EncResult>(p, [](ByteReader& r) {
    EncResult e;
    e.w = r.I64();
    e.cts = ReadBigList(r);
    return e;
  });
}

Bytes Encode(const AbortMsg& m) {
  ByteWriter w;
  w.U8(static_cast<std::uint8_t>(m.code));
  w.U8(m.step);
  w.String(m.detail);
  return std::move(w).Take();
}

AbortMsg DecodeAbort(std::span<const std::uint8_t> p) {
  return Parse<AbortMsg>(p, [](ByteReader& r) {
    AbortMsg a;
    const std::uint8_t code = r.U8();
    if (code < 1 || code > static_cast<std::uint8_t>(AbortCode::kSessionMismatch)) {
      throw DecodeError("unknown abort code");
    }
    a.code = static_cast<AbortCode>(code);
    a.step = r.U8();
    a.detail = r.String();
    return a;
  });
}

namespace {

// Walks a list of length-prefixed integers without materialising them.
std::size_t SkipBigList(ByteReader& r) {
  const std::uint32_t count = CheckedCount(r, 4);
  for (std::uint32_t i = 0; i < count; ++i) r.Raw(r.U32());
  return count;
}

}  // namespace

std::size_t CountValues(const Message& msg) {
  ByteReader r(msg.payload);
  switch (msg.type) {
    case MessageType::kEncTable: {
      r.I64();
      const std::uint32_t rows = CheckedCount(r, 4);
      std::size_t n = 0;
      for (std::uint32_t i = 0; i < rows; ++i) n += SkipBigList(r);
      return n;
    }
    case MessageType::kAggregated:
    case MessageType::kMasked:
    case MessageType::kMaskedPlaintexts:
      return SkipBigList(r);
    case MessageType::kEncResult:
      r.I64();
      return SkipBigList(r);
    case MessageType::kIndicatorVector:
      ReadOptionalKey(r);
      r.U64();
      r.U64();
      r.Big();
      return SkipBigList(r);
    default:
      return 0;
  }
}

std::vector<BigInt> Values(std::span<const paillier::Ciphertext> cts) {
  std::vector<BigInt> out;
  out.reserve(cts.size());
  for (const auto& c : cts) out.push_back(c.value);
  return out;
}

std::vector<paillier::Ciphertext> Ciphertexts(std::span<const BigInt> values,
                                              const paillier::PublicKey& pk, bool check) {
  std::vector<paillier::Ciphertext> out;
  out.reserve(values.size());
  for (const BigInt& v : values) {
    paillier::Ciphertext c{v, pk.id};
    if (check) paillier::CheckCiphertext(pk, c);
    out.push_back(std::move(c));
  }
  return out;
}

void WriteIndicatorFile(const std::string& path, const IndicatorVectorMsg& msg) {
  const Bytes frame = EncodeFrame(Message{MessageType::kIndicatorVector, SessionId{}, Encode(msg)});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

IndicatorVectorMsg ReadIndicatorFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  const Bytes frame((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const Message msg = DecodeFrame(frame);
  if (msg.type != MessageType::kIndicatorVector) throw FrameError("not an indicator vector file");
  return DecodeIndicatorVector(msg.payload);
}

}  // namespace locagg::wire
