#pragma once

// Simulated relay board, projectors, and cameras speaking the line protocol
// over loopback TCP. Each simulator serves any number of connections, one
// thread per connection, and supports scripted fault injection.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "uw3d/control/net.hpp"
#include "uw3d/control/protocol.hpp"
#include "uw3d/control/relay.hpp"
#include "uw3d/graycode.hpp"
#include "uw3d/image.hpp"
#include "uw3d/rig.hpp"

namespace uw3d::control {

using Clock = std::chrono::steady_clock;

inline constexpr const char* kFirmware = "uw3d-sim-1.0";

enum class FaultKind {
  drop_connection,  // close the socket instead of replying
  hang,             // swallow the command; the client times out
  error_reply,      // reply ERR injected-fault
};

// Fires on the command numbered `trigger_after + 1` (HELLO excluded). A
// persistent fault keeps firing for every later command and connection.
struct Fault {
  FaultKind kind = FaultKind::drop_connection;
  int trigger_after = 0;
  bool persistent = true;
};

class LineServer {
 public:
  LineServer(std::string device_type, std::string id, std::uint16_t port)
      : device_type_(std::move(device_type)), id_(std::move(id)), listener_(port) {}
  LineServer(const LineServer&) = delete;
  LineServer& operator=(const LineServer&) = delete;
  virtual ~LineServer() = default;  // derived classes must call stop()

  void start() {
    acceptor_ = std::jthread([this](std::stop_token st) { accept_loop(st); });
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    acceptor_.request_stop();
    listener_.shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<Worker> workers;
    {
      std::lock_guard lock(conn_mu_);
      workers = std::move(workers_);
    }
    for (auto& w : workers) {
      w.socket->shutdown();
      if (w.thread.joinable()) w.thread.join();
    }
  }

  std::uint16_t port() const { return listener_.port(); }
  const std::string& id() const { return id_; }
  const std::string& device_type() const { return device_type_; }

  void arm_fault(const Fault& f) {
    std::lock_guard lock(fault_mu_);
    fault_ = f;
    commands_seen_ = 0;
    fault_active_ = false;
  }

  void clear_fault() {
    std::lock_guard lock(fault_mu_);
    fault_.reset();
    fault_active_ = false;
  }

  // Supplies whether the relay currently powers this device. Unpowered
  // devices answer every command with ERR powered-off.
  void set_power_source(std::function<bool()> powered) { powered_ = std::move(powered); }

 protected:
  struct Response {
    std::string line;     // without newline
    std::string payload;  // raw bytes sent after the line
  };

  virtual Response handle(const Command& cmd) = 0;

  static Response ok(std::string arg = {}) { return {arg.empty() ? "OK" : "OK " + arg, {}}; }
  static Response err(const std::string& reason) { return {"ERR " + reason, {}}; }

 private:
  void accept_loop(std::stop_token st) {
    while (!st.stop_requested()) {
      auto sock = listener_.accept(net::Millis(50));
      if (!sock) continue;
      auto conn = std::make_shared<net::Socket>(std::move(*sock));
      auto done = std::make_shared<std::atomic<bool>>(false);
      std::lock_guard lock(conn_mu_);
      if (stopped_) break;
      // Reap finished connections.
      for (auto& w : workers_)
        if (w.done->load() && w.thread.joinable()) w.thread.join();
      std::erase_if(workers_, [](const Worker& w) { return !w.thread.joinable(); });
      workers_.push_back({std::jthread([this, conn, done](std::stop_token wst) {
                            serve(*conn, wst);
                            done->store(true);
                          }),
                          conn, done});
    }
  }

  std::optional<FaultKind> check_fault() {
    std::lock_guard lock(fault_mu_);
    if (!fault_) return std::nullopt;
    if (fault_active_) return fault_->kind;
    ++commands_seen_;
    if (commands_seen_ > fault_->trigger_after) {
      const auto kind = fault_->kind;
      if (fault_->persistent)
        fault_active_ = true;
      else
        fault_.reset();
      return kind;
    }
    return std::nullopt;
  }

  void serve(net::Socket& sock, std::stop_token st) {
    try {
      while (!st.stop_requested()) {
        std::optional<std::string> line;
        try {
          line = sock.read_line(net::Millis(250));
        } catch (const DeviceError&) {
          continue;  // idle timeout; keep the connection open
        }
        if (!line) break;
        const auto parsed = parse_command(*line);
        if (const auto* f = std::get_if<ParseFailure>(&parsed)) {
          sock.send_line("ERR " + f->reason);
          continue;
        }
        const auto& cmd = std::get<Command>(parsed);
        if (powered_ && !powered_()) {
          sock.send_line("ERR powered-off");
          continue;
        }
        if (const auto* hello = std::get_if<HelloCmd>(&cmd)) {
          if (hello->device_type != device_type_ || hello->id != id_) {
            sock.send_line("ERR expected " + device_type_ + " " + id_);
          } else {
            std::lock_guard lock(fault_mu_);
            // A persistent dropped device refuses new sessions too.
            if (fault_active_ && fault_ && fault_->kind == FaultKind::drop_connection) break;
            sock.send_line(std::string("OK ") + kFirmware);
          }
          continue;
        }
        if (const auto fault = check_fault()) {
          if (*fault == FaultKind::drop_connection) break;
          if (*fault == FaultKind::hang) continue;
          sock.send_line("ERR injected-fault");
          continue;
        }
        const Response r = handle(cmd);
        std::string out = r.line;
        out.push_back('\n');
        out += r.payload;
        sock.send_all(out);
      }
    } catch (const Error&) {
      // peer went away
    }
    sock.shutdown();
  }

  std::string device_type_;
  std::string id_;
  net::Listener listener_;
  std::jthread acceptor_;
  std::atomic<bool> stopped_{false};
  struct Worker {
    std::jthread thread;
    std::shared_ptr<net::Socket> socket;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::mutex conn_mu_;
  std::vector<Worker> workers_;
  std::function<bool()> powered_;

  std::mutex fault_mu_;
  std::optional<Fault> fault_;
  int commands_seen_ = 0;
  bool fault_active_ = false;
};

struct RelayEvent {
  Clock::time_point time;
  std::uint16_t bits = 0;
};

class RelaySimulator : public LineServer {
 public:
  explicit RelaySimulator(std::string id = "relay0", std::uint16_t port = 0)
      : LineServer("relay", std::move(id), port) {
    log_.push_back({Clock::now(), 0});
  }
  ~RelaySimulator() override { stop(); }

  RelayState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }
  bool port_on(int index) const {
    std::lock_guard lock(mu_);
    return state_.get(index);
  }
  std::vector<RelayEvent> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }

 protected:
  Response handle(const Command& cmd) override {
    if (const auto* s = std::get_if<SetCmd>(&cmd)) {
      const auto idx = resolve_relay_port(s->port);
      if (!idx) return err("unknown-port " + s->port);
      std::lock_guard lock(mu_);
      const auto before = state_.bits();
      const auto bits = state_.set(*idx, s->on);
      if (bits != before) log_.push_back({Clock::now(), bits});
      return ok(format_relay_bits(bits));
    }
    if (std::holds_alternative<GetCmd>(cmd)) {
      std::lock_guard lock(mu_);
      return ok(format_relay_bits(state_.bits()));
    }
    return err("unsupported-command");
  }

 private:
  mutable std::mutex mu_;
  RelayState state_;
  std::vector<RelayEvent> log_;
};

class ProjectorSimulator : public LineServer {
 public:
  ProjectorSimulator(std::string id, int pattern_count, std::uint16_t port = 0)
      : LineServer("projector", std::move(id), port), pattern_count_(pattern_count) {}
  ~ProjectorSimulator() override { stop(); }

  // Currently displayed pattern index; nullopt when blank.
  std::optional<int> shown() const {
    const int v = shown_.load();
    return v < 0 ? std::nullopt : std::optional<int>(v);
  }

  void set_pattern_count(int n) { pattern_count_ = n; }

 protected:
  Response handle(const Command& cmd) override {
    if (const auto* s = std::get_if<ShowCmd>(&cmd)) {
      if (s->pattern >= pattern_count_.load()) return err("pattern-out-of-range");
      shown_ = s->pattern;
      return ok();
    }
    if (std::holds_alternative<BlankCmd>(cmd)) {
      shown_ = -1;
      return ok();
    }
    return err("unsupported-command");
  }

 private:
  std::atomic<int> pattern_count_;
  std::atomic<int> shown_{-1};
};

struct CaptureEvent {
  Clock::time_point time;
  std::string camera;
  std::string session;
  int requested = 0;
  std::optional<int> shown;  // what the projector displayed at exposure
};

class CameraSimulator : public LineServer {
 public:
  // Produces the exposure for the projector's current pattern (nullopt = dark).
  using FrameSource = std::function<Image8(std::optional<int> shown_pattern)>;

  CameraSimulator(std::string id, FrameSource source, std::uint16_t port = 0)
      : LineServer("camera", std::move(id), port), source_(std::move(source)) {}
  ~CameraSimulator() override { stop(); }

  void set_projector_view(std::function<std::optional<int>()> view) { view_ = std::move(view); }

  std::vector<CaptureEvent> captures() const {
    std::lock_guard lock(mu_);
    return captures_;
  }

 protected:
  Response handle(const Command& cmd) override {
    const auto* c = std::get_if<CaptureCmd>(&cmd);
    if (!c) return err("unsupported-command");
    const std::optional<int> shown = view_ ? view_() : std::optional<int>(c->pattern);
    {
      std::lock_guard lock(mu_);
      captures_.push_back({Clock::now(), id(), c->session, c->pattern, shown});
    }
    std::string bytes = encode_pgm(source_(shown));
    return {"OK " + std::to_string(bytes.size()), std::move(bytes)};
  }

 private:
  FrameSource source_;
  std::function<std::optional<int>()> view_;
  mutable std::mutex mu_;
  std::vector<CaptureEvent> captures_;
};

// Procedural exposure: the camera sees the projector image resampled onto
// its own grid, 30 for dark and 220 for lit.
inline CameraSimulator::FrameSource projected_pattern_source(const PatternSpec& spec, int width, int height) {
  const auto layout = pattern_layout(spec);
  return [spec, layout, width, height](std::optional<int> shown) {
    Image8 img(width, height, 30);
    if (!shown || *shown < 0 || *shown >= static_cast<int>(layout.size())) return img;
    const auto& d = layout[static_cast<std::size_t>(*shown)];
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const int px = static_cast<int>(static_cast<long>(x) * spec.projector_width / width);
        const int py = static_cast<int>(static_cast<long>(y) * spec.projector_height / height);
        if (pattern_lit(spec, d, px, py)) img.at(x, y) = 220;
      }
    return img;
  };
}

// Exposure taken from a pre-rendered stack (e.g. synth::render output).
inline CameraSimulator::FrameSource stack_source(std::vector<Image8> stack) {
  auto shared = std::make_shared<const std::vector<Image8>>(std::move(stack));
  return [shared](std::optional<int> shown) {
    const auto& s = *shared;
    if (shown && *shown >= 0 && *shown < static_cast<int>(s.size())) return s[static_cast<std::size_t>(*shown)];
    // Dark frame: the black reference when available.
    Image8 dark = s.empty() ? Image8(1, 1, 30) : Image8(s.front().width, s.front().height, 30);
    return dark;
  };
}

// Relay, projectors, and cameras for a rig, cross-wired: devices are powered
// through their relay ports and cameras expose whatever the session
// projector currently shows.
class SimulatedBench {
 public:
  struct Options {
    std::uint16_t base_port = 0;  // 0 = ephemeral ports
    int camera_width = 0;         // 0 = rig resolution
    int camera_height = 0;
    bool gate_power = true;
    std::map<std::string, std::vector<Image8>> stacks;  // per camera id; overrides procedural frames
  };

  SimulatedBench(const RigConfig& rig, const PatternSpec& spec) : SimulatedBench(rig, spec, Options()) {}
  SimulatedBench(const RigConfig& rig, const PatternSpec& spec, Options opt) : spec_(spec) {
    auto next_port = [&]() -> std::uint16_t { return opt.base_port == 0 ? 0 : opt.base_port + allocated_++; };
    relay_ = std::make_unique<RelaySimulator>("relay0", next_port());
    const auto projectors = rig.projectors();
    const auto cameras = rig.cameras();
    if (projectors.empty()) throw InvalidArgument("bench: rig has no projector");
    for (std::size_t j = 0; j < projectors.size(); ++j) {
      auto p = std::make_unique<ProjectorSimulator>(projectors[j]->id, spec.pattern_count(), next_port());
      if (opt.gate_power) {
        const int port = 8 + static_cast<int>(j);
        p->set_power_source([this, port] { return port < kRelayPorts && relay_->port_on(port); });
      }
      projector_ports_[projectors[j]->id] = "proj" + std::to_string(j);
      projectors_.push_back(std::move(p));
    }
    for (std::size_t k = 0; k < cameras.size(); ++k) {
      const Device& cam = *cameras[k];
      const int w = opt.camera_width > 0 ? opt.camera_width : cam.width;
      const int h = opt.camera_height > 0 ? opt.camera_height : cam.height;
      auto it = opt.stacks.find(cam.id);
      auto source = it != opt.stacks.end() ? stack_source(it->second) : projected_pattern_source(spec, w, h);
      auto c = std::make_unique<CameraSimulator>(cam.id, std::move(source), next_port());
      if (opt.gate_power) {
        const int port = static_cast<int>(k);
        c->set_power_source([this, port] { return port < kRelayPorts && relay_->port_on(port); });
      }
      c->set_projector_view([this] { return active_view(); });
      camera_ports_[cam.id] = "cam" + std::to_string(k);
      cameras_.push_back(std::move(c));
    }
    relay_->start();
    for (auto& p : projectors_) p->start();
    for (auto& c : cameras_) c->start();
  }

  ~SimulatedBench() { stop(); }

  void stop() {
    for (auto& c : cameras_) c->stop();
    for (auto& p : projectors_) p->stop();
    relay_->stop();
  }

  RelaySimulator& relay() { return *relay_; }
  ProjectorSimulator& projector(std::size_t j) { return *projectors_.at(j); }
  CameraSimulator& camera(std::size_t k) { return *cameras_.at(k); }
  std::size_t camera_count() const { return cameras_.size(); }
  std::size_t projector_count() const { return projectors_.size(); }

  LineServer* find(const std::string& id) {
    for (auto& p : projectors_)
      if (p->id() == id) return p.get();
    for (auto& c : cameras_)
      if (c->id() == id) return c.get();
    return relay_->id() == id ? relay_.get() : nullptr;
  }

  std::map<std::string, std::uint16_t> device_ports() const {
    std::map<std::string, std::uint16_t> out;
    for (const auto& p : projectors_) out[p->id()] = p->port();
    for (const auto& c : cameras_) out[c->id()] = c->port();
    return out;
  }

  // device id -> relay port name
  std::map<std::string, std::string> relay_ports() const {
    auto out = camera_ports_;
    out.insert(projector_ports_.begin(), projector_ports_.end());
    return out;
  }

  std::uint16_t relay_port() const { return relay_->port(); }

 private:
  // The lit projector (first one showing a pattern).
  std::optional<int> active_view() const {
    for (const auto& p : projectors_)
      if (auto s = p->shown()) return s;
    return std::nullopt;
  }

  PatternSpec spec_;
  std::uint16_t allocated_ = 0;
  std::unique_ptr<RelaySimulator> relay_;
  std::vector<std::unique_ptr<ProjectorSimulator>> projectors_;
  std::vector<std::unique_ptr<CameraSimulator>> cameras_;
  std::map<std::string, std::string> camera_ports_;
  std::map<std::string, std::string> projector_ports_;
};

}  // namespace uw3d::control
