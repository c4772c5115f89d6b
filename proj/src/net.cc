#include "locagg/net.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace locagg::net {
namespace {

[[noreturn]] void ThrowErrno(const std::string& what) {
  throw NetError(what + ": " + std::strerror(errno));
}

}  // namespace

FdStream::~FdStream() {
  if (fd_ >= 0) ::close(fd_);
}

void FdStream::WriteAll(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      ThrowErrno("send");
    }
    done += static_cast<std::size_t>(n);
  }
}

bool FdStream::ReadExact(std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::recv(fd_, out.data() + done, out.size() - done, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      ThrowErrno("recv");
    }
    if (n == 0) {
      if (done == 0) return false;
      throw NetError("connection closed mid-frame");
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

void FdStream::ShutdownWrite() { ::shutdown(fd_, SHUT_WR); }

FdStream ConnectTcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw NetError("resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) ThrowErrno("connect " + host + ":" + service);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return FdStream(fd);
}

std::optional<wire::Message> ReadMessage(ByteStream& stream) {
  std::array<std::uint8_t, wire::kLengthBytes> prefix{};
  if (!stream.ReadExact(prefix)) return std::nullopt;
  const std::uint32_t len = wire::ReadFrameLength(prefix);
  Bytes body(len);
  if (!stream.ReadExact(body)) throw NetError("connection closed mid-frame");
  return wire::DecodeFrameBody(body);
}

std::size_t WriteMessage(ByteStream& stream, const wire::Message& msg) {
  const Bytes frame = wire::EncodeFrame(msg);
  stream.WriteAll(frame);
  return frame.size();
}

namespace {

std::size_t FrameSize(const wire::Message& m) {
  return wire::kLengthBytes + wire::kHeaderBytes + m.payload.size();
}

template <typename Session>
void Pump(Session& s, ByteStream& stream, StreamStats& stats) {
  while (!s.finished()) {
    std::optional<wire::Message> in;
    try {
      in = ReadMessage(stream);
    } catch (const DecodeError& e) {
      // The stream cannot be resynchronised after a broken frame.
      s.AbortLocal({AbortCode::kMalformed, e.what()});
      return;
    } catch (const NetError& e) {
      s.AbortLocal({AbortCode::kMalformed, e.what()});
      return;
    }
    if (!in) {
      s.AbortLocal({AbortCode::kMalformed, "connection closed mid-session"});
      return;
    }
    ++stats.frames_received;
    stats.bytes_received += FrameSize(*in);
    for (const wire::Message& out : s.Advance(*in)) {
      stats.bytes_sent += WriteMessage(stream, out);
      ++stats.frames_sent;
    }
  }
}

}  // namespace

StreamStats RunServerSession(session::ServerSession& s, ByteStream& stream) {
  StreamStats stats;
  Pump(s, stream, stats);
  return stats;
}

StreamStats RunClientSession(session::ClientSession& s, ByteStream& stream) {
  StreamStats stats;
  stats.bytes_sent += WriteMessage(stream, s.Start());
  ++stats.frames_sent;
  Pump(s, stream, stats);
  return stats;
}

TcpServer::TcpServer(server::ServerParty& party, const std::string& host, std::uint16_t port)
    : party_(party) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) ThrowErrno("socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw NetError("listen address must be a dotted IPv4 address: " + host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    const int err = errno;
    ::close(listen_fd_);
    errno = err;
    ThrowErrno("bind/listen " + host + ":" + std::to_string(port));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() {
  Stop();
  std::lock_guard lock(mu_);
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpServer::Stop() { stopping_ = true; }

void TcpServer::Serve(std::size_t max_sessions) {
  std::size_t accepted = 0;
  while (!stopping_ && (max_sessions == 0 || accepted < max_sessions)) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready < 0 && errno != EINTR) ThrowErrno("poll");
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      ThrowErrno("accept");
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    ++accepted;
    std::lock_guard lock(mu_);
    workers_.emplace_back([this, fd] {
      FdStream stream(fd);
      session::ServerSession s(party_, party_.ForkSessionRng());
      try {
        RunServerSession(s, stream);
      } catch (const std::exception&) {
        // Dropped connection or broken frame: the query is abandoned.
      }
      if (on_session_end) on_session_end(s);
    });
  }
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

}  // namespace locagg::net
