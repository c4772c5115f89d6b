#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "locagg/session.h"
#include "locagg/wire.h"

// Byte streams and the TCP service wrapped around the session state machines.
namespace locagg::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual void WriteAll(std::span<const std::uint8_t> bytes) = 0;
  // False on end of stream before the first byte; throws on a partial read.
  virtual bool ReadExact(std::span<std::uint8_t> out) = 0;
};

// Owns a connected socket (or any stream file descriptor).
class FdStream : public ByteStream {
 public:
  explicit FdStream(int fd) : fd_(fd) {}
  FdStream(FdStream&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  FdStream& operator=(FdStream&&) = delete;
  ~FdStream() override;

  void WriteAll(std::span<const std::uint8_t> bytes) override;
  bool ReadExact(std::span<std::uint8_t> out) override;
  void ShutdownWrite();

 private:
  int fd_;
};

FdStream ConnectTcp(const std::string& host, std::uint16_t port);

std::optional<wire::Message> ReadMessage(ByteStream& stream);
// Returns the number of bytes written.
std::size_t WriteMessage(ByteStream& stream, const wire::Message& msg);

struct StreamStats {
  std::size_t frames_sent = 0;
  std::size_t frames_received = 0;
  std::size_t bytes_sent = 0;
  std::size_t bytes_received = 0;
};

// Drives one side of a session over a stream until it finishes or the peer
// disconnects. A broken frame aborts the session.
StreamStats RunServerSession(session::ServerSession& s, ByteStream& stream);
StreamStats RunClientSession(session::ClientSession& s, ByteStream& stream);

// Accepts connections and runs one ServerSession per connection on its own
// thread. All sessions share the party.
class TcpServer {
 public:
  TcpServer(server::ServerParty& party, const std::string& host, std::uint16_t port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }
  // Blocks until Stop() or until max_sessions connections were accepted
  // (0 = unbounded), then waits for the running sessions.
  void Serve(std::size_t max_sessions = 0);
  void Stop();

  // Invoked after each session ends; for logging.
  std::function<void(const session::ServerSession&)> on_session_end;

 private:
  server::ServerParty& party_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::vector<std::thread> workers_;
};

}  // namespace locagg::net
