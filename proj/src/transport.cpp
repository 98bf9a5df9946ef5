#include "nvqoc/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>

namespace nvqoc {

namespace {

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

// Writes the whole buffer or fails; SIGPIPE is avoided via MSG_NOSIGNAL.
bool write_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n =
        ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

// Reads until `buffer` contains a '\n', returning the line without it.
// Returns false on EOF/error before a full line arrives.
bool read_line(int fd, std::string& buffer, std::string& line) {
  for (;;) {
    const std::size_t pos = buffer.find('\n');
    if (pos != std::string::npos) {
      line = buffer.substr(0, pos);
      buffer.erase(0, pos + 1);
      return true;
    }
    char chunk[4096];
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    if (n == 0) return false;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

int open_connection(const std::string& host, int port) {
  ::addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  ::addrinfo* result = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &result) != 0) {
    throw TransportError("cannot resolve host '" + host + "'");
  }
  int fd = -1;
  for (::addrinfo* it = result; it != nullptr; it = it->ai_next) {
    fd = ::socket(it->ai_family, it->ai_socktype, it->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, it->ai_addr, it->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(result);
  if (fd < 0) {
    throw TransportError("cannot connect to " + host + ":" + service);
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

} // namespace

TcpClient::TcpClient(std::string host, int port)
    : host_(std::move(host)), port_(port) {}

TcpClient::~TcpClient() { disconnect(); }

void TcpClient::ensure_connected() {
  if (fd_ < 0) {
    fd_ = open_connection(host_, port_);
    buffer_.clear();
  }
}

void TcpClient::disconnect() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  buffer_.clear();
}

bool TcpClient::send_and_receive(const std::string& line, std::string& reply) {
  if (!write_all(fd_, line)) return false;
  return read_line(fd_, buffer_, reply);
}

std::string TcpClient::roundtrip(const std::string& request_line) {
  std::string line = request_line;
  if (line.empty() || line.back() != '\n') line.push_back('\n');

  ensure_connected();
  std::string reply;
  if (send_and_receive(line, reply)) return reply;

  // Stale connection (server restart, idle drop): retry on a fresh one.
  disconnect();
  ensure_connected();
  if (send_and_receive(line, reply)) return reply;
  disconnect();
  throw TransportError("connection to " + host_ + ":" +
                       std::to_string(port_) + " lost mid-request");
}

TcpServer::TcpServer(const EvalService& service, const std::string& host,
                     int port)
    : service_(&service) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError(errno_text("socket"));

  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  ::sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
  } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    ::addrinfo* result = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &result) != 0 ||
        result == nullptr) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw TransportError("cannot resolve bind host '" + host + "'");
    }
    addr.sin_addr =
        reinterpret_cast<::sockaddr_in*>(result->ai_addr)->sin_addr;
    ::freeaddrinfo(result);
  }

  if (::bind(listen_fd_, reinterpret_cast<::sockaddr*>(&addr), sizeof(addr)) !=
      0) {
    const std::string reason = errno_text("bind");
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(reason + " (host " + host + ", port " +
                         std::to_string(port) + ")");
  }
  if (::listen(listen_fd_, 16) != 0) {
    const std::string reason = errno_text("listen");
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(reason);
  }

  ::sockaddr_in bound{};
  ::socklen_t len = sizeof(bound);
  if (::getsockname(listen_fd_, reinterpret_cast<::sockaddr*>(&bound), &len) !=
      0) {
    const std::string reason = errno_text("getsockname");
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(reason);
  }
  port_ = static_cast<int>(ntohs(bound.sin_port));
}

TcpServer::~TcpServer() {
  stop();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

void TcpServer::run() {
  while (!stop_.load()) {
    ::pollfd pfd{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("poll"));
    }
    if (ready == 0) continue;

    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      if (stop_.load()) break;
      throw TransportError(errno_text("accept"));
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

    std::lock_guard<std::mutex> lock(threads_mutex_);
    connections_.emplace_back([this, fd] { serve_connection(fd); });
  }

  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(threads_mutex_);
    workers.swap(connections_);
  }
  for (std::thread& t : workers) {
    if (t.joinable()) t.join();
  }
}

void TcpServer::stop() { stop_.store(true); }

void TcpServer::serve_connection(int fd) {
  std::string buffer;
  std::string line;
  while (!stop_.load()) {
    // Poll so a stop() request is honoured even on an idle connection.
    ::pollfd pfd{fd, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (ready == 0) continue;

    if (!read_line(fd, buffer, line)) break;
    if (line.empty()) continue;

    std::string reply;
    {
      // One evaluation at a time across all connections: the simulated
      // apparatus, like the physical one, is a serial resource.
      std::lock_guard<std::mutex> lock(evaluation_mutex_);
      reply = service_->handle_line(line);
    }
    reply.push_back('\n');
    if (!write_all(fd, reply)) break;
  }
  ::close(fd);
}

EvalResponse call(RequestTransport& transport, const EvalRequest& request) {
  const std::string reply = transport.roundtrip(encode(request));
  if (message_type(reply) == MessageType::Error) {
    const ErrorResponse err = parse_error(reply);
    throw EvalRejected(err.field, err.message);
  }
  EvalResponse response = parse_response(reply);
  if (response.id != request.id) {
    throw TransportError("response id " + std::to_string(response.id) +
                         " does not match request id " +
                         std::to_string(request.id));
  }
  return response;
}

} // namespace nvqoc
