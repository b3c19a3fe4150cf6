#include "elastic/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <thread>

namespace elastic::net {

namespace {

std::string errno_text(int err) { return std::strerror(err); }

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(Errc::refused, "cannot resolve host " + ep.host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

Fd& Fd::operator=(Fd&& o) noexcept {
  if (this != &o) {
    reset();
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}

void Fd::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Link::Link(Fd fd, std::uint32_t max_frame) : fd_(std::move(fd)), decoder_(max_frame) {}

void Link::send(const wire::Message& msg) {
  if (!fd_.valid()) throw Error(Errc::disconnected, "link is closed");
  Bytes bytes = wire::encode(msg);
  std::size_t off = 0;
  while (off < bytes.size()) {
    ssize_t n = ::send(fd_.get(), bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::disconnected, "send: " + errno_text(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

bool Link::pump() {
  if (!fd_.valid()) return false;
  std::array<std::byte, 64 * 1024> buf;
  for (;;) {
    ssize_t n = ::recv(fd_.get(), buf.data(), buf.size(), MSG_DONTWAIT);
    if (n > 0) {
      decoder_.feed(std::span(buf.data(), static_cast<std::size_t>(n)));
      if (static_cast<std::size_t>(n) < buf.size()) return true;
      continue;
    }
    if (n == 0) return false;
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return true;
    return false;
  }
}

std::optional<wire::Message> Link::next() {
  auto frame = decoder_.next();
  if (!frame) return std::nullopt;
  return wire::from_frame(*frame);
}

wire::Message Link::recv() {
  for (;;) {
    if (auto m = next()) return std::move(*m);
    if (!wait_readable(fd_.get(), std::chrono::milliseconds(-1))) continue;
    if (!pump()) {
      if (auto m = next()) return std::move(*m);
      throw Error(Errc::disconnected, "peer closed the link");
    }
  }
}

std::optional<wire::Message> Link::recv_for(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto m = next()) return m;
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    if (!wait_readable(fd_.get(), left)) continue;
    if (!pump()) {
      if (auto m = next()) return m;
      throw Error(Errc::disconnected, "peer closed the link");
    }
  }
}

void Link::shutdown() {
  if (fd_.valid()) ::shutdown(fd_.get(), SHUT_RDWR);
}

Listener Listener::bind(const std::string& host, std::uint16_t port) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw Error(Errc::io_error, "socket: " + errno_text(errno));
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = resolve(Endpoint{host, port});
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw Error(Errc::io_error, "bind " + host + ": " + errno_text(errno));
  }
  if (::listen(fd.get(), 128) != 0) throw Error(Errc::io_error, "listen: " + errno_text(errno));
  socklen_t len = sizeof addr;
  ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  Listener l;
  l.fd_ = std::move(fd);
  l.endpoint_ = Endpoint{host, ntohs(addr.sin_port)};
  return l;
}

Link Listener::accept() {
  for (;;) {
    int c = ::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (c >= 0) {
      set_nodelay(c);
      return Link(Fd(c));
    }
    if (errno == EINTR) continue;
    throw Error(Errc::io_error, "accept: " + errno_text(errno));
  }
}

Link connect(const Endpoint& endpoint, std::chrono::milliseconds timeout) {
  const auto start = std::chrono::steady_clock::now();
  const auto deadline = start + timeout;
  sockaddr_in addr = resolve(endpoint);
  auto backoff = std::chrono::milliseconds(5);
  int attempts = 0;
  for (;;) {
    ++attempts;
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd.valid()) throw Error(Errc::io_error, "socket: " + errno_text(errno));
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
      set_nodelay(fd.get());
      return Link(std::move(fd));
    }
    int err = errno;
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      if (attempts == 1) throw Error(Errc::refused, endpoint.str() + ": " + errno_text(err));
      throw Error(Errc::connect_timeout, endpoint.str() + " after " + std::to_string(timeout.count()) +
                                            " ms: " + errno_text(err));
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
    std::this_thread::sleep_for(std::min(backoff, left));
    backoff = std::min(backoff * 2, std::chrono::milliseconds(100));
  }
}

bool wait_readable(int fd, std::chrono::milliseconds timeout) {
  pollfd p{fd, POLLIN, 0};
  int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  return rc > 0;
}

}  // namespace elastic::net
