#pragma once

// Controller-side connection to one device, with reconnect-and-retry on
// transport failures.

#include <chrono>
#include <optional>
#include <string>
#include <thread>

#include "uw3d/control/net.hpp"
#include "uw3d/control/protocol.hpp"
#include "uw3d/error.hpp"

namespace uw3d::control {

struct RetryPolicy {
  int retries = 3;
  net::Millis initial_backoff{250};  // doubles after every failed attempt
  net::Millis reply_timeout{2000};
  net::Millis connect_timeout{1000};
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

class DeviceClient {
 public:
  DeviceClient(Endpoint ep, std::string device_type, std::string id, RetryPolicy policy = {})
      : ep_(std::move(ep)), type_(std::move(device_type)), id_(std::move(id)), policy_(policy) {}

  const std::string& id() const { return id_; }

  // Connects and performs the HELLO handshake, with retries.
  void connect() {
    with_retries([&] { ensure_connected(); return 0; });
  }

  // Sends a command and returns the parsed reply. Transport failures are
  // retried on a fresh connection; ERR replies are returned as-is.
  Reply command(const Command& cmd) {
    return with_retries([&] {
      ensure_connected();
      sock_->send_line(format_command(cmd));
      return read_reply();
    });
  }

  // Like command() but an ERR reply raises DeviceError.
  Reply expect_ok(const Command& cmd) {
    Reply r = command(cmd);
    if (!r.ok) throw DeviceError(id_ + ": " + format_command(cmd) + " -> ERR " + r.argument);
    return r;
  }

  // CAPTURE round trip; returns the image bytes.
  std::string capture(const std::string& session, int pattern) {
    return with_retries([&] {
      ensure_connected();
      sock_->send_line(format_command(CaptureCmd{session, pattern}));
      const Reply r = read_reply();
      if (!r.ok) throw RemoteError(id_ + ": CAPTURE -> ERR " + r.argument);
      std::size_t n = 0;
      try {
        n = std::stoul(r.argument);
      } catch (const std::exception&) {
        throw ProtocolError(id_ + ": CAPTURE reply without byte count");
      }
      if (n > (64U << 20)) throw ProtocolError(id_ + ": CAPTURE payload too large");
      return sock_->read_exact(n, policy_.reply_timeout);
    });
  }

  void close() { sock_.reset(); }

 private:
  // ERR reply to a command that must succeed; not retried.
  class RemoteError : public DeviceError {
   public:
    using DeviceError::DeviceError;
  };

  void ensure_connected() {
    if (sock_) return;
    net::Socket s = net::connect_tcp(ep_.host, ep_.port, policy_.connect_timeout);
    s.send_line(format_command(HelloCmd{type_, id_}));
    const auto line = s.read_line(policy_.reply_timeout);
    if (!line) throw DeviceError(id_ + ": connection closed during HELLO");
    const auto r = parse_reply(*line);
    if (!r) throw ProtocolError(id_ + ": malformed HELLO reply '" + *line + "'");
    if (!r->ok) throw DeviceError(id_ + ": HELLO refused: " + r->argument);
    firmware_ = r->argument;
    sock_ = std::move(s);
  }

  Reply read_reply() {
    const auto line = sock_->read_line(policy_.reply_timeout);
    if (!line) throw DeviceError(id_ + ": connection closed");
    const auto r = parse_reply(*line);
    if (!r) throw ProtocolError(id_ + ": malformed reply '" + *line + "'");
    return *r;
  }

  template <class F>
  auto with_retries(F&& attempt) -> decltype(attempt()) {
    auto backoff = policy_.initial_backoff;
    for (int i = 0;; ++i) {
      try {
        return attempt();
      } catch (const RemoteError&) {
        throw;
      } catch (const Error& e) {
        sock_.reset();
        if (i >= policy_.retries) throw DeviceError(id_ + ": giving up after " + std::to_string(i + 1) +
                                                    " attempts: " + e.what());
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
  }

  Endpoint ep_;
  std::string type_;
  std::string id_;
  RetryPolicy policy_;
  std::optional<net::Socket> sock_;
  std::string firmware_;
};

}  // namespace uw3d::control
