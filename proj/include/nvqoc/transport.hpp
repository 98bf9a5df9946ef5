#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "nvqoc/eval_service.hpp"
#include "nvqoc/protocol.hpp"

namespace nvqoc {

// Connection-level failure (refused, closed, short write). Distinct from a
// structured error response, which the server sends over a healthy link.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Server-side rejection of a request (schema violation, unrunnable physics),
// reconstructed from an error message on the wire.
struct EvalRejected : std::runtime_error {
  std::string field;

  EvalRejected(std::string field_path, const std::string& message)
      : std::runtime_error(message), field(std::move(field_path)) {}
};

// One request line in, one response line out. Implementations must preserve
// the exact reply bytes so loopback and TCP runs are interchangeable.
class RequestTransport {
 public:
  virtual ~RequestTransport() = default;
  virtual std::string roundtrip(const std::string& request_line) = 0;
};

// In-process transport: the full pipeline with no network involved.
class LoopbackTransport final : public RequestTransport {
 public:
  explicit LoopbackTransport(const EvalService& service) : service_(&service) {}

  std::string roundtrip(const std::string& request_line) override {
    return service_->handle_line(request_line);
  }

 private:
  const EvalService* service_;
};

// Newline-delimited request/response client. Connects lazily; a broken
// connection is re-established once per call before giving up.
class TcpClient final : public RequestTransport {
 public:
  TcpClient(std::string host, int port);
  ~TcpClient() override;
  TcpClient(const TcpClient&) = delete;
  TcpClient& operator=(const TcpClient&) = delete;

  std::string roundtrip(const std::string& request_line) override;

 private:
  void ensure_connected();
  void disconnect();
  bool send_and_receive(const std::string& line, std::string& reply);

  std::string host_;
  int port_ = 0;
  int fd_ = -1;
  std::string buffer_;
};

// Accepts any number of connections; evaluations are serialized through one
// mutex, emulating the single physical experiment behind the interface.
class TcpServer {
 public:
  TcpServer(const EvalService& service, const std::string& host, int port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  int port() const { return port_; } // actual bound port (port 0 = ephemeral)
  void run();                        // blocks until stop()
  void stop();

 private:
  void serve_connection(int fd);

  const EvalService* service_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::mutex evaluation_mutex_;
  std::mutex threads_mutex_;
  std::vector<std::thread> connections_;
};

// Typed convenience: encode, exchange, parse; a structured error response
// becomes EvalRejected, a connection failure stays TransportError.
EvalResponse call(RequestTransport& transport, const EvalRequest& request);

} // namespace nvqoc
