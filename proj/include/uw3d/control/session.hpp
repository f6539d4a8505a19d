#pragma once

// Capture session state machine and the controller that drives it:
// power up, project and capture every pattern with a per-pattern barrier,
// collect, upload, power down.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "uw3d/control/client.hpp"
#include "uw3d/control/failover.hpp"
#include "uw3d/control/relay.hpp"
#include "uw3d/control/sink.hpp"
#include "uw3d/graycode.hpp"
#include "uw3d/image.hpp"
#include "uw3d/logging.hpp"
#include "uw3d/pattern_io.hpp"
#include "uw3d/rig.hpp"

namespace uw3d::control {

enum class SessionState { Idle, PoweringOn, Projecting, Capturing, Collecting, Uploading, PoweringOff, Done, Failed };

inline const char* to_string(SessionState s) {
  switch (s) {
    case SessionState::Idle: return "Idle";
    case SessionState::PoweringOn: return "PoweringOn";
    case SessionState::Projecting: return "Projecting";
    case SessionState::Capturing: return "Capturing";
    case SessionState::Collecting: return "Collecting";
    case SessionState::Uploading: return "Uploading";
    case SessionState::PoweringOff: return "PoweringOff";
    case SessionState::Done: return "Done";
    case SessionState::Failed: return "Failed";
  }
  return "?";
}

inline bool is_terminal(SessionState s) { return s == SessionState::Done || s == SessionState::Failed; }

class SessionRejected : public Error {
 public:
  using Error::Error;
};

struct StateTransition {
  SessionState state;
  Clock::time_point time;
};

struct CaptureSession {
  std::string id;
  SessionState state = SessionState::Idle;
  std::string failure_reason;
  std::vector<StateTransition> transitions{{SessionState::Idle, Clock::now()}};
  nlohmann::json pattern_manifest;
  std::vector<std::string> artifacts;  // sink-relative paths
  std::size_t images_captured = 0;
  bool projector_off_verified = false;

  // Moves forward in the declared order; Failed is reachable from any
  // non-terminal state.
  void advance(SessionState next) {
    if (is_terminal(state)) throw InvalidArgument("session " + id + ": already terminal");
    if (next != SessionState::Failed && static_cast<int>(next) != static_cast<int>(state) + 1)
      throw InvalidArgument(std::string("session ") + id + ": illegal transition " + to_string(state) + " -> " +
                            to_string(next));
    const auto now = Clock::now();
    log_event("session.transition", {{"session", id}, {"from", to_string(state)}, {"to", to_string(next)}});
    state = next;
    transitions.push_back({next, now});
  }

  void fail(const std::string& reason) {
    advance(SessionState::Failed);
    failure_reason = reason;
  }

  std::optional<Clock::time_point> entered(SessionState s) const {
    for (const auto& t : transitions)
      if (t.state == s) return t.time;
    return std::nullopt;
  }

  // Interval during which this session may hold projector power:
  // from entering PoweringOn until the terminal state.
  std::optional<std::pair<Clock::time_point, Clock::time_point>> power_window() const {
    const auto start = entered(SessionState::PoweringOn);
    if (!start || !is_terminal(state)) return std::nullopt;
    return std::make_pair(*start, transitions.back().time);
  }

  nlohmann::json to_json() const {
    nlohmann::json ts = nlohmann::json::array();
    const auto t0 = transitions.front().time;
    for (const auto& t : transitions)
      ts.push_back({{"state", to_string(t.state)},
                    {"t_ms", std::chrono::duration<double, std::milli>(t.time - t0).count()}});
    nlohmann::json j = {{"session", id},
                        {"state", to_string(state)},
                        {"transitions", ts},
                        {"patterns", pattern_manifest},
                        {"images_captured", images_captured},
                        {"artifacts", artifacts},
                        {"projector_off_verified", projector_off_verified}};
    if (state == SessionState::Failed) j["failure_reason"] = failure_reason;
    return j;
  }
};

// Reconstruction hook: receives stack[camera][pattern] and returns PLY bytes
// to upload alongside the images, or nullopt to skip.
using ReconstructHook = std::function<std::optional<std::string>(const std::vector<std::vector<Image8>>&)>;

struct SessionOptions {
  std::string session_id;               // empty: <controller>-<counter>
  std::string projector_id;             // empty: first projector in the rig
  std::vector<std::string> camera_ids;  // empty: every camera
  ReconstructHook reconstruct;
};

struct ControllerConfig {
  std::string name = "pc0";
  Endpoint relay;
  std::string relay_id = "relay0";
  std::map<std::string, Endpoint> devices;          // device id -> endpoint
  std::map<std::string, std::string> relay_ports;   // device id -> relay port name
  RetryPolicy policy;
};

class Controller {
 public:
  Controller(ControllerConfig cfg, RoleState role) : cfg_(std::move(cfg)), role_(role) { role_.config.validate(); }

  RoleState role() const {
    std::lock_guard lock(mu_);
    return role_;
  }
  void set_role(RoleState r) {
    std::lock_guard lock(mu_);
    role_ = r;
  }
  void observe_heartbeat_age(double age) {
    std::lock_guard lock(mu_);
    const auto before = role_.role();
    role_ = failover_step(role_, age);
    if (before != role_.role()) log_event("controller.promoted", {{"controller", cfg_.name}, {"heartbeat_age", age}});
  }

  bool session_active() const { return active_.load(); }

  const ControllerConfig& config() const { return cfg_; }

  // Runs one capture session to completion. Throws SessionRejected when the
  // controller is not primary or another session is active; every other
  // failure ends in a Failed session after projector power-off.
  CaptureSession run_session(const RigConfig& rig, const PatternSpec& spec, UploadSink& sink,
                             const SessionOptions& opt = {}) {
    if (role().role() != Role::primary) throw SessionRejected(cfg_.name + ": not the primary controller");
    bool expected = false;
    if (!active_.compare_exchange_strong(expected, true))
      throw SessionRejected(cfg_.name + ": a session is already active");
    struct Release {
      std::atomic<bool>& flag;
      ~Release() { flag = false; }
    } release{active_};

    spec.validate();
    CaptureSession s;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "%04llu", static_cast<unsigned long long>(++counter_));
    s.id = opt.session_id.empty() ? cfg_.name + "-" + idbuf : opt.session_id;
    s.pattern_manifest = manifest_json(spec);

    const Device* projector = nullptr;
    if (opt.projector_id.empty()) {
      const auto ps = rig.projectors();
      if (ps.empty()) throw InvalidArgument("session: rig has no projector");
      projector = ps.front();
    } else {
      projector = &rig.get(opt.projector_id, DeviceRole::projector);
    }
    std::vector<const Device*> cameras;
    if (opt.camera_ids.empty())
      cameras = rig.cameras();
    else
      for (const auto& id : opt.camera_ids) cameras.push_back(&rig.get(id, DeviceRole::camera));
    if (cameras.empty()) throw InvalidArgument("session: no cameras");

    const int n_patterns = spec.pattern_count();
    std::vector<std::vector<std::string>> raw(cameras.size(), std::vector<std::string>(static_cast<std::size_t>(n_patterns)));
    std::optional<DeviceClient> relay;
    std::optional<DeviceClient> proj;
    std::vector<DeviceClient> cams;

    auto manifest = [&] {
      nlohmann::json m = s.to_json();
      m["cameras"] = nlohmann::json::array();
      for (std::size_t k = 0; k < cameras.size(); ++k) m["cameras"].push_back({{"index", k}, {"id", cameras[k]->id}});
      return m;
    };

    log_event("session.start", {{"session", s.id}, {"controller", cfg_.name}, {"patterns", n_patterns},
                                {"cameras", cameras.size()}, {"projector", projector->id}});
    try {
      s.advance(SessionState::PoweringOn);
      relay.emplace(cfg_.relay, "relay", cfg_.relay_id, cfg_.policy);
      relay->connect();
      for (const auto* c : cameras) relay->expect_ok(SetCmd{relay_port(c->id), true});
      relay->expect_ok(SetCmd{relay_port(projector->id), true});
      proj.emplace(endpoint(projector->id), "projector", projector->id, cfg_.policy);
      proj->connect();
      for (const auto* c : cameras) {
        cams.emplace_back(endpoint(c->id), "camera", c->id, cfg_.policy);
        cams.back().connect();
      }

      s.advance(SessionState::Projecting);
      proj->expect_ok(BlankCmd{});

      s.advance(SessionState::Capturing);
      for (int i = 0; i < n_patterns; ++i) {
        proj->expect_ok(ShowCmd{i});
        // Barrier: every camera finishes this exposure before the next pattern.
        std::vector<std::exception_ptr> errors(cams.size());
        {
          std::vector<std::jthread> workers;
          workers.reserve(cams.size());
          for (std::size_t k = 0; k < cams.size(); ++k)
            workers.emplace_back([&, k] {
              try {
                raw[k][static_cast<std::size_t>(i)] = cams[k].capture(s.id, i);
              } catch (...) {
                errors[k] = std::current_exception();
              }
            });
        }
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
        s.images_captured += cams.size();
      }

      s.advance(SessionState::Collecting);
      std::vector<std::vector<Image8>> stacks(cameras.size());
      for (std::size_t k = 0; k < cameras.size(); ++k) {
        for (const auto& bytes : raw[k]) stacks[k].push_back(decode_pgm(bytes));
        for (const auto& img : stacks[k])
          if (!img.same_shape(stacks[k].front())) throw DeviceError(cameras[k]->id + ": image size changed mid-session");
      }

      s.advance(SessionState::Uploading);
      for (std::size_t k = 0; k < cameras.size(); ++k)
        for (int i = 0; i < n_patterns; ++i) {
          sink.put_image(s.id, static_cast<int>(k), i, raw[k][static_cast<std::size_t>(i)]);
          s.artifacts.push_back(sink_image_path(s.id, static_cast<int>(k), i));
        }
      if (opt.reconstruct) {
        if (auto ply = opt.reconstruct(stacks)) {
          sink.put_file(s.id, "cloud.ply", *ply);
          s.artifacts.push_back("session-" + s.id + "/cloud.ply");
        }
      }
      s.artifacts.push_back("session-" + s.id + "/manifest.json");
      sink.put_manifest(s.id, manifest());

      s.advance(SessionState::PoweringOff);
      proj->expect_ok(BlankCmd{});
      relay->expect_ok(SetCmd{relay_port(projector->id), false});
      for (const auto* c : cameras) relay->expect_ok(SetCmd{relay_port(c->id), false});
      s.projector_off_verified = projector_off(*relay, projector->id);
      s.advance(SessionState::Done);
      try {
        sink.put_manifest(s.id, manifest());
      } catch (const std::exception& e) {
        log_event("session.manifest_failed", {{"session", s.id}, {"reason", e.what()}});
      }
    } catch (const std::exception& e) {
      const std::string reason = e.what();
      log_event("session.error", {{"session", s.id}, {"state", to_string(s.state)}, {"reason", reason}});
      cleanup(relay, proj, projector->id, cameras, s);
      s.fail(reason);
      try {
        sink.put_manifest(s.id, manifest());
      } catch (const std::exception&) {
        // Sink unreachable; the session record still carries the failure.
      }
    }
    log_event("session.end", {{"session", s.id}, {"state", to_string(s.state)}});
    return s;
  }

 private:
  Endpoint endpoint(const std::string& id) const {
    const auto it = cfg_.devices.find(id);
    if (it == cfg_.devices.end()) throw InvalidArgument("controller: no endpoint for device '" + id + "'");
    return it->second;
  }

  std::string relay_port(const std::string& id) const {
    const auto it = cfg_.relay_ports.find(id);
    if (it == cfg_.relay_ports.end()) throw InvalidArgument("controller: no relay port for device '" + id + "'");
    return it->second;
  }

  bool projector_off(DeviceClient& relay, const std::string& projector_id) {
    const Reply r = relay.expect_ok(GetCmd{});
    const auto bits = parse_relay_bits(r.argument);
    const auto idx = resolve_relay_port(relay_port(projector_id));
    return bits && idx && ((*bits >> *idx) & 1U) == 0;
  }

  // Best effort: blank and power down the projector first, then cameras.
  void cleanup(std::optional<DeviceClient>& relay, std::optional<DeviceClient>& proj, const std::string& projector_id,
               const std::vector<const Device*>& cameras, CaptureSession& s) {
    if (proj) {
      try {
        proj->expect_ok(BlankCmd{});
      } catch (const std::exception&) {
      }
    }
    try {
      if (!relay) relay.emplace(cfg_.relay, "relay", cfg_.relay_id, cfg_.policy);
      relay->expect_ok(SetCmd{relay_port(projector_id), false});
      for (const auto* c : cameras) relay->expect_ok(SetCmd{relay_port(c->id), false});
      s.projector_off_verified = projector_off(*relay, projector_id);
    } catch (const std::exception& e) {
      log_event("session.cleanup_failed", {{"session", s.id}, {"reason", e.what()}});
    }
  }

  ControllerConfig cfg_;
  mutable std::mutex mu_;
  RoleState role_;
  std::atomic<bool> active_{false};
  std::atomic<std::uint64_t> counter_{0};
};

// Controller wiring for a SimulatedBench.
inline ControllerConfig bench_controller_config(const SimulatedBench& bench, RetryPolicy policy = {},
                                                std::string name = "pc0") {
  ControllerConfig cfg;
  cfg.name = std::move(name);
  cfg.relay = {"127.0.0.1", bench.relay_port()};
  for (const auto& [id, port] : bench.device_ports()) cfg.devices[id] = {"127.0.0.1", port};
  cfg.relay_ports = bench.relay_ports();
  cfg.policy = policy;
  return cfg;
}

}  // namespace uw3d::control
