#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <utility>

#include "elastic/wire.hpp"

namespace elastic::net {

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset();

 private:
  int fd_ = -1;
};

/// Bidirectional ordered frame stream over a connected TCP socket.
/// One reader and one writer may use a Link concurrently.
class Link {
 public:
  Link() = default;
  explicit Link(Fd fd, std::uint32_t max_frame = wire::kDefaultMaxFrame);

  bool valid() const { return fd_.valid(); }
  int fd() const { return fd_.get(); }

  /// Blocking write of one message. Errors: Disconnected.
  void send(const wire::Message& msg);

  /// Blocking read of one message. Errors: Disconnected on EOF, codec errors.
  wire::Message recv();
  /// As recv(), but gives up after `timeout` and returns nullopt.
  std::optional<wire::Message> recv_for(std::chrono::milliseconds timeout);

  /// Drains whatever bytes are readable without blocking. Returns false on EOF.
  bool pump();
  /// Next complete message buffered by pump(), if any.
  std::optional<wire::Message> next();

  void shutdown();
  void close() { fd_.reset(); }

 private:
  Fd fd_;
  wire::FrameDecoder decoder_;
};

class Listener {
 public:
  /// Binds host:port (port 0 = ephemeral) and listens.
  static Listener bind(const std::string& host = "127.0.0.1", std::uint16_t port = 0);

  int fd() const { return fd_.get(); }
  const Endpoint& endpoint() const { return endpoint_; }
  /// Accepts one pending connection (blocking unless poll said readable).
  Link accept();

 private:
  Fd fd_;
  Endpoint endpoint_;
};

/// Connects with bounded exponential backoff until `timeout` elapses.
/// Errors: ConnectTimeout; Refused when a single attempt is all the budget allows.
Link connect(const Endpoint& endpoint, std::chrono::milliseconds timeout);

/// Waits until `fd` is readable or the timeout passes; true if readable.
bool wait_readable(int fd, std::chrono::milliseconds timeout);

}  // namespace elastic::net
