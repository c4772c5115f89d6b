#include "locagg/session.h"

#include <deque>
#include <stdexcept>
#include <string>

namespace locagg::session {

using wire::Message;
using wire::MessageType;
using paillier::Ciphertext;

void Transcript::Record(Direction dir, const Message& msg, int step) {
  std::size_t values = 0;
  try {
    values = wire::CountValues(msg);
  } catch (const DecodeError&) {
  }
  const std::size_t bytes =
      dir == Direction::kLocal ? 0 : wire::kLengthBytes + wire::kHeaderBytes + msg.payload.size();
  entries_.push_back(TranscriptEntry{dir, msg.type, step, bytes, values, ElapsedMs()});
}

double Transcript::ElapsedMs() const {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
      .count();
}

wire::SessionId RandomSessionId(Rng& rng) {
  wire::SessionId id;
  rng.Fill(id);
  return id;
}

namespace {

std::string Unexpected(MessageType type, int step) {
  return "unexpected " + std::string(wire::MessageTypeName(type)) + " after step " +
         std::to_string(step);
}

// Runs `body`, mapping every failure to the abort it stands for.
template <typename F>
std::optional<Abort> Guard(F&& body) {
  try {
    body();
    return std::nullopt;
  } catch (const ProtocolAbort& e) {
    return e.abort();
  } catch (const DecodeError& e) {
    return Abort{AbortCode::kMalformed, e.what()};
  } catch (const paillier::PaillierError& e) {
    return Abort{AbortCode::kCryptoError, e.what()};
  } catch (const std::invalid_argument& e) {
    return Abort{AbortCode::kMalformed, e.what()};
  } catch (const std::out_of_range& e) {
    return Abort{AbortCode::kMalformed, e.what()};
  }
}

}  // namespace

// ---------------------------------------------------------------- server

ServerSession::ServerSession(server::ServerParty& party, Rng rng)
    : party_(party), rng_(std::move(rng)) {}

Message ServerSession::Send(MessageType type, Bytes payload, int step) {
  Message msg{type, session_, std::move(payload)};
  transcript_.Record(Direction::kSent, msg, step);
  return msg;
}

std::vector<Message> ServerSession::Fail(Abort abort) {
  state_ = State::kAborted;
  wire::AbortMsg body{abort.code, static_cast<std::uint8_t>(step_), abort.detail};
  abort_ = std::move(abort);
  return {Send(MessageType::kAbort, wire::Encode(body), step_)};
}

void ServerSession::AbortLocal(Abort abort) {
  if (finished()) return;
  state_ = State::kAborted;
  abort_ = std::move(abort);
}

std::vector<Message> ServerSession::Advance(const Message& in) {
  if (finished()) return {};
  if (state_ != State::kAwaitHello && in.session != session_) {
    transcript_.Record(Direction::kReceived, in, step_);
    return Fail({AbortCode::kSessionMismatch, "frame for another session"});
  }
  std::vector<Message> out;
  if (auto abort = Guard([&] { out = Handle(in); })) return Fail(std::move(*abort));
  return out;
}

std::vector<Message> ServerSession::Handle(const Message& in) {
  if (in.type == MessageType::kAbort) {
    transcript_.Record(Direction::kReceived, in, step_);
    const wire::AbortMsg a = wire::DecodeAbort(in.payload);
    abort_ = Abort{a.code, "peer: " + a.detail};
    state_ = State::kAborted;
    return {};
  }
  switch (state_) {
    case State::kAwaitHello:
      if (in.type == MessageType::kHello) return OnHello(in);
      break;
    case State::kAwaitRequest:
      if (in.type == MessageType::kQueryRequest) return OnQuery(in);
      if (in.type == MessageType::kIndicatorVector && variant_ == Variant::kClientBased) {
        return OnIndicator(in);
      }
      if (in.type == MessageType::kDone) {
        transcript_.Record(Direction::kReceived, in, 0);
        state_ = State::kClosed;
        step_ = 0;
        return {};
      }
      break;
    case State::kAwaitMasked:
      if (in.type == MessageType::kMasked) return OnMasked(in);
      break;
    case State::kClosed:
    case State::kAborted:
      return {};
  }
  transcript_.Record(Direction::kReceived, in, step_);
  throw ProtocolAbort({AbortCode::kStepViolation, Unexpected(in.type, step_)});
}

std::vector<Message> ServerSession::OnHello(const Message& in) {
  session_ = in.session;
  transcript_.Record(Direction::kReceived, in, 0);
  const wire::Hello hello = wire::DecodeHello(in.payload);
  variant_ = hello.variant;
  const auto& cfg = party_.config();
  wire::SetupParams params;
  params.superset_size = party_.dataset().superset_size;
  if (hello.variant == Variant::kServerBased) {
    if (!party_.has_server_key()) {
      throw ProtocolAbort({AbortCode::kNotSetUp, "server holds no key pair"});
    }
    params.server_key = party_.server_key().pub;
  } else if (auto store = party_.client_store()) {
    params.stored_client_key = store->pk.id;
  }
  params.existing.assign(party_.known_existing().begin(), party_.known_existing().end());
  params.epsilon = cfg.epsilon;
  params.metric = cfg.metric;
  params.max_coordinate = cfg.max_coordinate;
  params.theta1 = cfg.theta1;
  params.theta2 = cfg.theta2;
  state_ = State::kAwaitRequest;
  step_ = 0;
  return {Send(MessageType::kSetupParams, wire::Encode(params), 0)};
}

std::vector<Message> ServerSession::OnIndicator(const Message& in) {
  transcript_.Record(Direction::kReceived, in, 0);
  step_ = 0;
  wire::IndicatorVectorMsg msg = wire::DecodeIndicatorVector(in.payload);
  std::optional<Abort> abort;
  if (msg.client_key) {
    if (msg.offset != 0) throw ProtocolAbort({AbortCode::kMalformed, "initial upload with offset"});
    EncryptedIndicatorVector vec;
    vec.entries = wire::Ciphertexts(msg.entries, *msg.client_key);
    vec.declared_count = msg.declared_count;
    vec.combined_randomizer = msg.combined_randomizer;
    abort = party_.InstallIndicatorVector(*msg.client_key, std::move(vec));
  } else {
    auto store = party_.client_store();
    if (!store) throw ProtocolAbort({AbortCode::kNotSetUp, "no indicator vector installed"});
    abort = party_.UpdateIndicatorWindow(msg.offset, wire::Ciphertexts(msg.entries, store->pk),
                                         msg.declared_count, msg.combined_randomizer);
  }
  if (abort) throw ProtocolAbort(std::move(*abort));
  return {Send(MessageType::kDone, {}, 0)};
}

std::vector<Message> ServerSession::OnQuery(const Message& in) {
  step_ = 1;
  transcript_.Record(Direction::kReceived, in, 1);
  const wire::QueryRequest req = wire::DecodeQueryRequest(in.payload);
  FacilitySet fs{req.facilities, req.existing_count};
  step_ = 2;
  if (fs.empty()) throw ProtocolAbort({AbortCode::kTooFewFacilities, "empty facility set"});

  if (variant_ == Variant::kServerBased) {
    server::ServerTable table = party_.BuildTable(req.kind, fs, rng_);
    step_ = 3;
    wire::EncTable body;
    body.w = table.w;
    body.rows.reserve(table.rows.size());
    for (const auto& row : table.rows) body.rows.push_back(wire::Values(row));
    table.rows.clear();
    table.rows.shrink_to_fit();
    step_ = 4;
    Message out = Send(MessageType::kEncTable, wire::Encode(body), 4);
    pending_ = std::move(table);
    pending_->rows.resize(body.rows.size());  // only the row count is kept
    state_ = State::kAwaitMasked;
    return {std::move(out)};
  }

  server::ClientBasedAnswer answer = party_.AnswerClientBased(req.kind, fs, rng_);
  step_ = 4;
  wire::EncResult body{answer.w, wire::Values(answer.cts)};
  last_agg_ = std::move(answer.aggregates);
  step_ = 5;
  return {Send(MessageType::kEncResult, wire::Encode(body), 5)};
}

std::vector<Message> ServerSession::OnMasked(const Message& in) {
  step_ = 7;
  transcript_.Record(Direction::kReceived, in, 7);
  const wire::ValueList masked = wire::DecodeValueList(in.payload);
  if (masked.values.size() != pending_->rows.size()) {
    throw ProtocolAbort({AbortCode::kMalformed, "masked value count does not match the table"});
  }
  const auto& pk = party_.server_key().pub;
  step_ = 8;
  auto step8 = party_.DecryptStep8(pending_->kind, wire::Ciphertexts(masked.values, pk),
                                   pending_->max_distance);
  step8_plain_ = std::move(step8.decrypted);
  step8_noise_ = std::move(step8.noise);
  pending_.reset();
  step_ = 9;
  state_ = State::kAwaitRequest;
  return {Send(MessageType::kMaskedPlaintexts, wire::Encode(wire::ValueList{step8.returned}), 9)};
}

// ---------------------------------------------------------------- client

ClientSession::ClientSession(client::ClientParty& party, Variant variant, Rng rng)
    : party_(party), variant_(variant), rng_(std::move(rng)) {
  if (variant == Variant::kClientBased && !party.has_client_key()) {
    throw std::invalid_argument("client-based sessions need a client key pair");
  }
  session_ = RandomSessionId(rng_);
}

void ClientSession::EnqueueQuery(QueryKind kind, std::optional<Location> candidate) {
  Action a;
  a.kind = kind;
  a.candidate = candidate;
  queue_.push_back(std::move(a));
}

void ClientSession::EnqueueQuery(QueryKind kind, FacilitySet facilities) {
  Action a;
  a.kind = kind;
  a.facilities = std::move(facilities);
  queue_.push_back(std::move(a));
}

void ClientSession::EnqueueIndicatorUpdate(std::vector<UserId> changed_ids, std::uint64_t begin,
                                           std::uint64_t end) {
  if (variant_ != Variant::kClientBased) {
    throw std::logic_error("indicator updates belong to the client-based variant");
  }
  Action a;
  a.is_update = true;
  a.changed_ids = std::move(changed_ids);
  a.begin = begin;
  a.end = end;
  queue_.push_back(std::move(a));
}

Message ClientSession::Send(MessageType type, Bytes payload, int step) {
  Message msg{type, session_, std::move(payload)};
  transcript_.Record(Direction::kSent, msg, step);
  return msg;
}

std::vector<Message> ClientSession::Fail(Abort abort) {
  state_ = State::kAborted;
  wire::AbortMsg body{abort.code, static_cast<std::uint8_t>(step_), abort.detail};
  abort_ = std::move(abort);
  return {Send(MessageType::kAbort, wire::Encode(body), step_)};
}

void ClientSession::AbortLocal(Abort abort) {
  if (finished()) return;
  state_ = State::kAborted;
  abort_ = std::move(abort);
}

Message ClientSession::Start() {
  if (state_ != State::kIdle) throw std::logic_error("session already started");
  state_ = State::kAwaitParams;
  return Send(MessageType::kHello, wire::Encode(wire::Hello{wire::kProtocolVersion, variant_}), 0);
}

std::vector<Message> ClientSession::Advance(const Message& in) {
  if (finished()) return {};
  if (in.session != session_) {
    transcript_.Record(Direction::kReceived, in, step_);
    return Fail({AbortCode::kSessionMismatch, "frame for another session"});
  }
  std::vector<Message> out;
  if (auto abort = Guard([&] { out = Handle(in); })) return Fail(std::move(*abort));
  return out;
}

std::vector<Message> ClientSession::Handle(const Message& in) {
  if (in.type == MessageType::kAbort) {
    transcript_.Record(Direction::kReceived, in, step_);
    const wire::AbortMsg a = wire::DecodeAbort(in.payload);
    step_ = a.step;
    abort_ = Abort{a.code, a.detail};
    state_ = State::kAborted;
    return {};
  }
  switch (state_) {
    case State::kAwaitParams:
      if (in.type == MessageType::kSetupParams) return OnParams(in);
      break;
    case State::kAwaitAck:
      if (in.type == MessageType::kDone) {
        transcript_.Record(Direction::kReceived, in, 0);
        return NextAction();
      }
      break;
    case State::kAwaitTable:
      if (in.type == MessageType::kEncTable) return OnTable(in);
      break;
    case State::kAwaitPlaintexts:
      if (in.type == MessageType::kMaskedPlaintexts) return OnPlaintexts(in);
      break;
    case State::kAwaitResult:
      if (in.type == MessageType::kEncResult) return OnResult(in);
      break;
    default:
      break;
  }
  transcript_.Record(Direction::kReceived, in, step_);
  throw ProtocolAbort({AbortCode::kStepViolation, Unexpected(in.type, step_)});
}

std::vector<Message> ClientSession::OnParams(const Message& in) {
  transcript_.Record(Direction::kReceived, in, 0);
  wire::SetupParams params = wire::DecodeSetupParams(in.payload);
  if (params.superset_size != party_.dataset().superset_size) {
    throw ProtocolAbort({AbortCode::kMalformed, "superset size differs from the client's"});
  }
  if (variant_ == Variant::kServerBased && !params.server_key) {
    throw ProtocolAbort({AbortCode::kMalformed, "server-based setup without a public key"});
  }
  params_ = std::move(params);
  if (variant_ == Variant::kClientBased &&
      (force_upload_ || params_->stored_client_key != party_.client_key().pub.id)) {
    const client::ClientIndicatorState& state =
        party_.has_indicator() ? party_.indicator() : party_.BuildIndicator(rng_);
    wire::IndicatorVectorMsg msg;
    msg.client_key = party_.client_key().pub;
    msg.declared_count = state.vec.declared_count;
    msg.combined_randomizer = state.vec.combined_randomizer;
    msg.entries = wire::Values(state.vec.entries);
    state_ = State::kAwaitAck;
    return {Send(MessageType::kIndicatorVector, wire::Encode(msg), 0)};
  }
  return NextAction();
}

std::vector<Message> ClientSession::NextAction() {
  step_ = 0;
  if (queue_.empty()) {
    state_ = State::kClosed;
    return {Send(MessageType::kDone, {}, 0)};
  }
  Action a = std::move(queue_.front());
  queue_.pop_front();
  if (a.is_update) {
    client::IndicatorUpdate up = party_.UpdateMembership(a.changed_ids, a.begin, a.end, rng_);
    wire::IndicatorVectorMsg msg;
    msg.offset = up.offset;
    msg.declared_count = up.declared_count;
    msg.combined_randomizer = up.combined_randomizer;
    msg.entries = wire::Values(up.entries);
    state_ = State::kAwaitAck;
    return {Send(MessageType::kIndicatorVector, wire::Encode(msg), 0)};
  }
  FacilitySet fs = a.facilities ? std::move(*a.facilities)
                   : a.candidate ? FacilitySet::WithCandidate(params_->existing, *a.candidate)
                                 : FacilitySet::Existing(params_->existing);
  current_kind_ = a.kind;
  query_start_ms_ = transcript_.ElapsedMs();
  step_ = 1;
  wire::QueryRequest req{a.kind, static_cast<std::uint32_t>(fs.existing_count), fs.facilities};
  state_ = variant_ == Variant::kServerBased ? State::kAwaitTable : State::kAwaitResult;
  return {Send(MessageType::kQueryRequest, wire::Encode(req), 1)};
}

std::vector<Message> ClientSession::OnTable(const Message& in) {
  step_ = 4;
  transcript_.Record(Direction::kReceived, in, 4);
  const wire::EncTable table = wire::DecodeEncTable(in.payload);
  const auto& pk = *params_->server_key;
  const auto& data = party_.dataset();
  if (current_kind_ == QueryKind::kAvg && table.rows.size() != 2) {
    throw ProtocolAbort({AbortCode::kMalformed, "AVGQ table must have two rows"});
  }
  if (current_kind_ == QueryKind::kMax &&
      (table.w < 0 || table.rows.size() != static_cast<std::uint64_t>(table.w) + 1)) {
    throw ProtocolAbort({AbortCode::kMalformed, "MAXQ table must have w + 1 rows"});
  }
  EncryptedMatrix rows;
  rows.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row.size() != data.superset_size) {
      throw ProtocolAbort({AbortCode::kMalformed, "table row length != superset size"});
    }
    rows.push_back(wire::Ciphertexts(row, pk, false));
  }
  step_ = 5;
  std::vector<Ciphertext> aggregated;
  std::vector<Ciphertext> masked =
      client::PrepareMasked(current_kind_, rows, table.w, data.user_ids, data.superset_size, pk,
                            rng_, pending_, &aggregated, forced_masks_);
  transcript_.Record(Direction::kLocal,
                     Message{MessageType::kAggregated, session_,
                             wire::Encode(wire::ValueList{wire::Values(aggregated)})},
                     5);
  step_ = 7;
  state_ = State::kAwaitPlaintexts;
  return {Send(MessageType::kMasked, wire::Encode(wire::ValueList{wire::Values(masked)}), 7)};
}

void ClientSession::Finish(QueryOutcome outcome) {
  outcome.kind = current_kind_;
  outcome.elapsed_ms = transcript_.ElapsedMs() - query_start_ms_;
  outcomes_.push_back(std::move(outcome));
}

std::vector<Message> ClientSession::OnPlaintexts(const Message& in) {
  step_ = 9;
  transcript_.Record(Direction::kReceived, in, 9);
  const wire::ValueList values = wire::DecodeValueList(in.payload);
  const std::size_t expected =
      pending_.kind == QueryKind::kMax ? pending_.permutation.size() : pending_.masks.size();
  if (values.values.size() != expected) {
    throw ProtocolAbort({AbortCode::kMalformed, "plaintext count does not match the query"});
  }
  for (const BigInt& v : values.values) {
    if (sgn(v) < 0 || v >= pending_.modulus) {
      throw ProtocolAbort({AbortCode::kMalformed, "plaintext outside [0, m)"});
    }
  }
  step_ = 10;
  QueryOutcome outcome;
  try {
    outcome.result = client::FinishServerBased(pending_, values.values, params_->epsilon);
  } catch (const NoCommonUsersError& e) {
    outcome.error = e.what();
  }
  pending_ = {};
  Finish(std::move(outcome));
  return NextAction();
}

std::vector<Message> ClientSession::OnResult(const Message& in) {
  step_ = 5;
  transcript_.Record(Direction::kReceived, in, 5);
  const wire::EncResult res = wire::DecodeEncResult(in.payload);
  const auto& kp = party_.client_key();
  step_ = 6;
  QueryOutcome outcome;
  try {
    outcome.result = client::DecryptResults(kp, current_kind_, wire::Ciphertexts(res.cts, kp.pub),
                                            params_->epsilon, &outcome.decryptions);
  } catch (const NoCommonUsersError& e) {
    outcome.error = e.what();
    outcome.decryptions = 2;
  }
  if (current_kind_ == QueryKind::kMax && outcome.result) {
    auto& max = std::get<MaxResult>(outcome.result->value);
    if (max.w != res.w) throw ProtocolAbort({AbortCode::kMalformed, "bucket count != w + 1"});
  }
  Finish(std::move(outcome));
  return NextAction();
}

// ---------------------------------------------------------------- driver

PipeStats RunInProcess(ServerSession& server, ClientSession& client) {
  PipeStats stats;
  std::deque<Bytes> to_server;
  std::deque<Bytes> to_client;
  to_server.push_back(wire::EncodeFrame(client.Start()));
  while (!to_server.empty() || !to_client.empty()) {
    while (!to_server.empty()) {
      Bytes frame = std::move(to_server.front());
      to_server.pop_front();
      ++stats.client_frames;
      stats.client_bytes += frame.size();
      for (const Message& m : server.Advance(wire::DecodeFrame(frame))) {
        to_client.push_back(wire::EncodeFrame(m));
      }
    }
    while (!to_client.empty()) {
      Bytes frame = std::move(to_client.front());
      to_client.pop_front();
      ++stats.server_frames;
      stats.server_bytes += frame.size();
      for (const Message& m : client.Advance(wire::DecodeFrame(frame))) {
        to_server.push_back(wire::EncodeFrame(m));
      }
    }
  }
  return stats;
}

}  // namespace locagg::session
