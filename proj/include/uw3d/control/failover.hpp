#pragma once

// Primary/backup controller roles. The primary sends BEAT lines to the
// backup every heartbeat period; a backup that hears nothing for longer than
// the takeover timeout promotes itself and never demotes automatically.

#include <atomic>
#include <chrono>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "uw3d/control/client.hpp"
#include "uw3d/control/devices.hpp"
#include "uw3d/error.hpp"

namespace uw3d::control {

enum class Role { primary, backup };

inline const char* to_string(Role r) { return r == Role::primary ? "primary" : "backup"; }

struct ControllerRole {
  Role role = Role::backup;
  double heartbeat_period = 1.0;  // seconds
  double takeover_timeout = 5.0;  // seconds

  void validate() const {
    if (!(heartbeat_period > 0.0)) throw InvalidArgument("failover: heartbeat period must be positive");
    if (takeover_timeout < 3.0 * heartbeat_period)
      throw InvalidArgument("failover: takeover timeout must be at least 3 heartbeat periods");
  }
};

struct RoleState {
  ControllerRole config;
  bool promoted = false;  // became primary through takeover

  Role role() const { return config.role; }
};

inline RoleState failover_step(RoleState state, double last_heartbeat_age) {
  state.config.validate();
  if (state.config.role == Role::backup && last_heartbeat_age > state.config.takeover_timeout) {
    state.config.role = Role::primary;
    state.promoted = true;
  }
  return state;
}

inline bool heartbeat_due(double since_last_beat, const ControllerRole& cfg) {
  return cfg.role == Role::primary && since_last_beat >= cfg.heartbeat_period;
}

// Backup side: accepts BEAT lines and remembers when the last one arrived.
class HeartbeatListener : public LineServer {
 public:
  explicit HeartbeatListener(std::string id, std::uint16_t port = 0)
      : LineServer("controller", std::move(id), port), last_(Clock::now()) {}
  ~HeartbeatListener() override { stop(); }

  double age_seconds(Clock::time_point now = Clock::now()) const {
    std::lock_guard lock(mu_);
    return std::chrono::duration<double>(now - last_).count();
  }
  std::optional<std::uint64_t> last_sequence() const {
    std::lock_guard lock(mu_);
    return seq_;
  }
  Clock::time_point last_beat() const {
    std::lock_guard lock(mu_);
    return last_;
  }

 protected:
  Response handle(const Command& cmd) override {
    const auto* b = std::get_if<BeatCmd>(&cmd);
    if (!b) return err("unsupported-command");
    std::lock_guard lock(mu_);
    last_ = Clock::now();
    seq_ = b->seq;
    return ok();
  }

 private:
  mutable std::mutex mu_;
  Clock::time_point last_;
  std::optional<std::uint64_t> seq_;
};

// Primary side: sends BEAT every period until killed.
class HeartbeatSender {
 public:
  HeartbeatSender(Endpoint peer, std::string peer_id, ControllerRole cfg, RetryPolicy policy = {})
      : client_(std::move(peer), "controller", std::move(peer_id), policy), cfg_(cfg) {
    cfg_.validate();
  }
  ~HeartbeatSender() { kill(); }

  void start() {
    thread_ = std::jthread([this](std::stop_token st) { run(st); });
  }

  // Simulated hardware failure: no further beats. The kill takes effect at
  // the next moment a beat would have been sent; returns that instant.
  Clock::time_point kill() {
    kill_requested_ = true;
    if (thread_.joinable()) thread_.join();
    std::lock_guard lock(mu_);
    return killed_at_.value_or(Clock::now());
  }

  std::uint64_t beats_sent() const { return seq_.load(); }

 private:
  void run(std::stop_token st) {
    const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(cfg_.heartbeat_period));
    auto next = Clock::now();
    while (!st.stop_requested()) {
      std::this_thread::sleep_until(next);
      if (kill_requested_) {
        std::lock_guard lock(mu_);
        killed_at_ = Clock::now();
        return;
      }
      try {
        client_.expect_ok(BeatCmd{"primary", seq_ + 1});
        ++seq_;
      } catch (const Error&) {
        // Peer unreachable; keep beating.
      }
      next += period;
    }
  }

  DeviceClient client_;
  ControllerRole cfg_;
  std::jthread thread_;
  std::atomic<bool> kill_requested_{false};
  std::atomic<std::uint64_t> seq_{0};
  std::mutex mu_;
  std::optional<Clock::time_point> killed_at_;
};

}  // namespace uw3d::control
