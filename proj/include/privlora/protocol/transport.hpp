/*
 * Copyright 2026 The privlora Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>
#include <utility>

#include "privlora/protocol/frame.hpp"

namespace privlora::protocol {

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

/// Owning TCP stream socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }

  void close() {
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
  }
  /// Wakes any thread blocked on this socket without releasing the fd.
  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void set_timeout_ms(long ms) {
    timeval tv{};
    tv.tv_sec = ms / 1000;
    tv.tv_usec = (ms % 1000) * 1000;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  }

  void send_all(std::span<const std::uint8_t> data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError(errno_text("send"));
      off += static_cast<std::size_t>(n);
    }
  }

  void recv_exact(std::span<std::uint8_t> out) {
    std::size_t off = 0;
    while (off < out.size()) {
      const ssize_t n = ::recv(fd_, out.data() + off, out.size() - off, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n == 0) throw TransportError("connection closed by peer");
      if (n < 0) throw TransportError(errno == EAGAIN || errno == EWOULDBLOCK ? "receive timed out" : errno_text("recv"));
      off += static_cast<std::size_t>(n);
    }
  }

 private:
  int fd_ = -1;
};

/// Frames over one socket, with counters for the accounting checks.
class FrameChannel {
 public:
  explicit FrameChannel(Socket sock, std::size_t max_frame = max_frame_from_env())
      : sock_(std::move(sock)), max_frame_(max_frame) {}

  void send(MsgType type, Bytes payload = {}) {
    sock_.send_all(encode_frame({type, std::move(payload)}, max_frame_));
    ++sent_;
  }

  Frame recv() {
    std::uint8_t raw[kFrameHeaderSize];
    sock_.recv_exact(raw);
    const FrameHeader h = parse_header(raw, max_frame_);
    Frame f;
    f.type = h.type;
    f.payload.resize(h.length);
    sock_.recv_exact(f.payload);
    ++received_;
    return f;
  }

  /// Writes bytes as is; for tests that need malformed frames on the wire.
  void send_raw(std::span<const std::uint8_t> bytes) { sock_.send_all(bytes); }

  Socket& socket() { return sock_; }
  std::size_t max_frame() const { return max_frame_; }
  std::size_t frames_sent() const { return sent_; }
  std::size_t frames_received() const { return received_; }

 private:
  Socket sock_;
  std::size_t max_frame_;
  std::size_t sent_ = 0;
  std::size_t received_ = 0;
};

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string svc = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), svc.c_str(), &hints, &res); rc != 0)
    throw TransportError("resolve " + host + ": " + ::gai_strerror(rc));
  std::string last = "no addresses for " + host;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!s.valid()) continue;
    if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      const int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return s;
    }
    last = errno_text(("connect " + host + ":" + svc).c_str());
  }
  ::freeaddrinfo(res);
  throw TransportError(last);
}

/// Listening IPv4 socket; port 0 picks an ephemeral port.
class Listener {
 public:
  Listener(const std::string& host, std::uint16_t port) : sock_(::socket(AF_INET, SOCK_STREAM, 0)) {
    if (!sock_.valid()) throw TransportError(errno_text("socket"));
    const int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw TransportError("bad listen address " + host);
    if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw TransportError(errno_text("bind"));
    if (::listen(sock_.fd(), 64) != 0) throw TransportError(errno_text("listen"));
    socklen_t len = sizeof addr;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  std::uint16_t port() const { return port_; }

  /// Blocks for the next connection; throws TransportError once shut down.
  Socket accept() {
    for (;;) {
      const int fd = ::accept(sock_.fd(), nullptr, nullptr);
      if (fd >= 0) {
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return Socket(fd);
      }
      if (errno == EINTR || errno == ECONNABORTED) continue;
      throw TransportError(errno_text("accept"));
    }
  }

  void shutdown() { sock_.shutdown(); }

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

}  // namespace privlora::protocol
