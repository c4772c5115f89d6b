#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "locagg/client_party.h"
#include "locagg/server_party.h"
#include "locagg/wire.h"

// Per-connection protocol state machines. Steps follow the numbering of the
// protocols: server-based queries transfer at steps 1, 4, 7, 9; client-based
// queries at steps 1 and 5. Setup and teardown messages are step 0.
namespace locagg::session {

enum class Direction : std::uint8_t { kSent, kReceived, kLocal };

struct TranscriptEntry {
  Direction direction;
  wire::MessageType type;
  int step = 0;
  std::size_t frame_bytes = 0;  // 0 for local records
  std::size_t values = 0;       // ciphertexts or plaintexts carried
  double elapsed_ms = 0;        // since the session started
};

class Transcript {
 public:
  Transcript() : start_(std::chrono::steady_clock::now()) {}
  void Record(Direction dir, const wire::Message& msg, int step);
  const std::vector<TranscriptEntry>& entries() const { return entries_; }
  double ElapsedMs() const;

 private:
  std::chrono::steady_clock::time_point start_;
  std::vector<TranscriptEntry> entries_;
};

wire::SessionId RandomSessionId(Rng& rng);

class ServerSession {
 public:
  ServerSession(server::ServerParty& party, Rng rng);

  // Handles one incoming message and returns the replies.
  std::vector<wire::Message> Advance(const wire::Message& in);

  bool finished() const { return state_ == State::kClosed || state_ == State::kAborted; }
  const std::optional<Abort>& abort() const { return abort_; }
  // Ends the session without a reply, e.g. when the connection is lost.
  void AbortLocal(Abort abort);
  int step() const { return step_; }
  std::optional<Variant> variant() const { return variant_; }
  const Transcript& transcript() const { return transcript_; }

  // What the server saw at step 8 of the last server-based query, and the
  // noise it added before step 9.
  const std::vector<BigInt>& last_step8_plaintexts() const { return step8_plain_; }
  const std::vector<std::int64_t>& last_step8_noise() const { return step8_noise_; }
  // Aggregates behind the last client-based answer.
  const std::optional<server::QueryAggregates>& last_aggregates() const { return last_agg_; }

 private:
  enum class State { kAwaitHello, kAwaitRequest, kAwaitMasked, kClosed, kAborted };

  std::vector<wire::Message> Handle(const wire::Message& in);
  std::vector<wire::Message> OnHello(const wire::Message& in);
  std::vector<wire::Message> OnIndicator(const wire::Message& in);
  std::vector<wire::Message> OnQuery(const wire::Message& in);
  std::vector<wire::Message> OnMasked(const wire::Message& in);
  wire::Message Send(wire::MessageType type, Bytes payload, int step);
  std::vector<wire::Message> Fail(Abort abort);

  server::ServerParty& party_;
  Rng rng_;
  State state_ = State::kAwaitHello;
  int step_ = 0;
  wire::SessionId session_{};
  std::optional<Variant> variant_;
  std::optional<Abort> abort_;
  Transcript transcript_;

  std::optional<server::ServerTable> pending_;
  std::vector<BigInt> step8_plain_;
  std::vector<std::int64_t> step8_noise_;
  std::optional<server::QueryAggregates> last_agg_;
};

struct QueryOutcome {
  QueryKind kind = QueryKind::kRnn;
  std::optional<QueryResult> result;
  std::optional<std::string> error;  // set when no result could be formed
  std::size_t decryptions = 0;       // client-side decryptions at the last step
  double elapsed_ms = 0;
};

class ClientSession {
 public:
  ClientSession(client::ClientParty& party, Variant variant, Rng rng);

  // Facility set = the server's existing facilities, plus the candidate.
  void EnqueueQuery(QueryKind kind, std::optional<Location> candidate = std::nullopt);
  void EnqueueQuery(QueryKind kind, FacilitySet facilities);
  // Client-based: flip membership of changed_ids and resend [begin, end).
  void EnqueueIndicatorUpdate(std::vector<UserId> changed_ids, std::uint64_t begin,
                              std::uint64_t end);
  // Uploads the indicator vector even when the server already holds one
  // under this client's key.
  void set_force_upload(bool force) { force_upload_ = force; }
  // Replaces the uniform additive masks of the next server-based queries.
  void set_forced_masks(std::vector<BigInt> masks) { forced_masks_ = std::move(masks); }

  wire::Message Start();
  std::vector<wire::Message> Advance(const wire::Message& in);

  bool finished() const { return state_ == State::kClosed || state_ == State::kAborted; }
  const std::optional<Abort>& abort() const { return abort_; }
  void AbortLocal(Abort abort);
  int step() const { return step_; }
  const std::optional<wire::SetupParams>& params() const { return params_; }
  const std::vector<QueryOutcome>& outcomes() const { return outcomes_; }
  const Transcript& transcript() const { return transcript_; }
  const wire::SessionId& session_id() const { return session_; }

 private:
  enum class State {
    kIdle, kAwaitParams, kAwaitAck, kAwaitTable, kAwaitPlaintexts, kAwaitResult, kClosed, kAborted
  };

  struct Action {
    bool is_update = false;
    QueryKind kind = QueryKind::kRnn;
    std::optional<FacilitySet> facilities;
    std::optional<Location> candidate;
    std::vector<UserId> changed_ids;
    std::uint64_t begin = 0, end = 0;
  };

  std::vector<wire::Message> Handle(const wire::Message& in);
  std::vector<wire::Message> OnParams(const wire::Message& in);
  std::vector<wire::Message> OnTable(const wire::Message& in);
  std::vector<wire::Message> OnPlaintexts(const wire::Message& in);
  std::vector<wire::Message> OnResult(const wire::Message& in);
  std::vector<wire::Message> NextAction();
  wire::Message Send(wire::MessageType type, Bytes payload, int step);
  std::vector<wire::Message> Fail(Abort abort);
  void Finish(QueryOutcome outcome);

  client::ClientParty& party_;
  Variant variant_;
  Rng rng_;
  State state_ = State::kIdle;
  int step_ = 0;
  wire::SessionId session_{};
  std::optional<Abort> abort_;
  Transcript transcript_;
  std::optional<wire::SetupParams> params_;
  std::deque<Action> queue_;
  bool force_upload_ = false;
  std::vector<BigInt> forced_masks_;

  QueryKind current_kind_ = QueryKind::kRnn;
  double query_start_ms_ = 0;
  client::PendingServerBased pending_;
  std::vector<QueryOutcome> outcomes_;
};

struct PipeStats {
  std::size_t client_frames = 0;  // client -> server
  std::size_t server_frames = 0;  // server -> client
  std::size_t client_bytes = 0;
  std::size_t server_bytes = 0;
};

// Runs both state machines to completion in this thread, passing every
// message through the frame codec.
PipeStats RunInProcess(ServerSession& server, ClientSession& client);

}  // namespace locagg::session
