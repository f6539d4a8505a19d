#pragma once

// The uw3d command line: one binary, one subcommand per pipeline stage.
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uw3d/calibrate.hpp"
#include "uw3d/control/devices.hpp"
#include "uw3d/control/failover.hpp"
#include "uw3d/control/relay.hpp"
#include "uw3d/control/scheduler.hpp"
#include "uw3d/control/session.hpp"
#include "uw3d/control/sink.hpp"
#include "uw3d/correspondence_io.hpp"
#include "uw3d/graycode.hpp"
#include "uw3d/logging.hpp"
#include "uw3d/pattern_io.hpp"
#include "uw3d/ply.hpp"
#include "uw3d/reconstruct.hpp"
#include "uw3d/rig.hpp"
#include "uw3d/synth.hpp"

namespace uw3d::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kPortBaseEnv = "UW3D_PORT_BASE";

inline std::optional<std::uint16_t> env_port_base() {
  const char* v = std::getenv(kPortBaseEnv);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long p = std::strtol(v, &end, 10);
  if (*end != '\0' || p <= 0 || p > 65535) throw InvalidArgument(std::string(kPortBaseEnv) + ": bad port '" + v + "'");
  return static_cast<std::uint16_t>(p);
}

inline std::atomic<bool>& interrupted() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline void on_signal(int) { interrupted() = true; }

// Splits "x,y,z" into a vector.
inline Vec3 parse_vec3(const std::string& text) {
  Vec3 v;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> v.x() >> c1 >> v.y() >> c2 >> v.z()) || c1 != ',' || c2 != ',' || !in.eof())
    throw InvalidArgument("expected x,y,z, got '" + text + "'");
  return v;
}

// Capture metadata written by `simulate`, read back by `decode`.
inline constexpr const char* kCaptureFile = "capture.json";

struct StackSource {
  PatternSpec spec;
  std::vector<Image8> images;
  std::string camera_id;
  std::string projector_id;
};

// A pattern directory (manifest.json + pat_*.pgm) or a camera directory
// inside an upload sink session (cam<k>/pat<idx>.pgm, session manifest one
// level up).
inline StackSource load_stack_source(const fs::path& dir) {
  StackSource s;
  if (fs::exists(dir / "manifest.json")) {
    auto loaded = read_stack(dir);
    s.spec = loaded.spec;
    s.images = std::move(loaded.images);
    if (fs::exists(dir / kCaptureFile)) {
      const auto meta = json::parse(read_file(dir / kCaptureFile));
      s.camera_id = meta.value("camera_id", "");
      s.projector_id = meta.value("projector_id", "");
    }
    return s;
  }
  const fs::path normalized = dir.has_filename() ? dir : dir.parent_path();
  const fs::path session_dir = normalized.parent_path();
  if (!fs::exists(session_dir / "manifest.json"))
    throw IoError(dir.string() + ": neither a pattern directory nor a session camera directory");
  const auto manifest = json::parse(read_file(session_dir / "manifest.json"));
  if (!manifest.contains("patterns")) throw IoError(session_dir.string() + "/manifest.json: no pattern manifest");
  s.spec = spec_from_manifest(manifest.at("patterns"));
  const std::string cam_dir = normalized.filename().string();
  for (const auto& c : manifest.value("cameras", json::array()))
    if ("cam" + std::to_string(c.at("index").get<int>()) == cam_dir) s.camera_id = c.at("id").get<std::string>();
  for (int i = 0; i < s.spec.pattern_count(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "pat%03d.pgm", i);
    s.images.push_back(read_pgm(normalized / name));
  }
  return s;
}

struct EndpointFile {
  std::uint16_t relay = 0;
  std::map<std::string, std::uint16_t> devices;
  std::map<std::string, std::string> relay_ports;
};

inline json endpoints_json(const control::SimulatedBench& bench) {
  json devices = json::object();
  for (const auto& [id, port] : bench.device_ports()) devices[id] = port;
  json ports = json::object();
  for (const auto& [id, name] : bench.relay_ports()) ports[id] = name;
  return {{"host", "127.0.0.1"}, {"relay", bench.relay_port()}, {"devices", devices}, {"relay_ports", ports}};
}

inline EndpointFile endpoints_from_json(const json& j) {
  try {
    EndpointFile e;
    e.relay = j.at("relay").get<std::uint16_t>();
    for (const auto& [id, port] : j.at("devices").items()) e.devices[id] = port.get<std::uint16_t>();
    for (const auto& [id, name] : j.at("relay_ports").items()) e.relay_ports[id] = name.get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw InvalidArgument(std::string("endpoints: ") + ex.what());
  }
}

// Relay assignment by rig order: cameras on cam<k>, projectors on proj<j>.
inline std::map<std::string, std::string> default_relay_ports(const RigConfig& rig) {
  std::map<std::string, std::string> out;
  const auto cams = rig.cameras();
  const auto projs = rig.projectors();
  for (std::size_t k = 0; k < cams.size(); ++k) out[cams[k]->id] = "cam" + std::to_string(k);
  for (std::size_t j = 0; j < projs.size(); ++j) out[projs[j]->id] = "proj" + std::to_string(j);
  return out;
}

// --------------------------------------------------------------------------

struct Options {
  // patterns
  int width = 1024;
  int height = 768;
  bool no_inverses = false;
  bool no_references = false;
  std::string out;
  // simulate
  std::string scene;
  std::string rig;
  std::string camera = "cam0";
  std::string projector = "proj0";
  double sigma = 0.0;
  std::uint64_t seed = 0;
  // decode
  std::string in;
  std::string decode_camera;
  double threshold = kDefaultContrastThreshold;
  // reconstruct
  std::string corr;
  std::string corr_b;
  std::string mode = "camera-projector";
  double max_gap = kDefaultMaxGap;
  std::string truth;
  // calibrate
  std::string obs;
  std::string init_normal = "0,0,1";
  double init_distance = 0.05;
  std::size_t synthesize = 0;
  double min_range = 0.3;
  double max_range = 1.2;
  // devices / orchestrate / relay
  int pattern_width = 0;
  int pattern_height = 0;
  int camera_width = 0;
  int camera_height = 0;
  double duration = 0.0;
  std::string schedule = "on_demand";
  std::string sink;
  std::string endpoints;
  bool simulate = false;
  bool once = false;
  int max_sessions = 0;
  std::string role = "primary";
  int peer = 0;
  int listen = 0;
  double heartbeat = 1.0;
  double takeover = 5.0;
  std::vector<std::string> sets;
  bool get = false;
  std::string host = "127.0.0.1";
  int port = 0;
  int retries = 3;
  int backoff_ms = 250;
  int timeout_ms = 2000;
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int patterns(const Options& o) {
    PatternSpec spec{o.width, o.height, !o.no_inverses, !o.no_references};
    spec.validate();
    const fs::path dir = require_out(o);
    write_pattern_sequence(dir, generate_patterns(spec));
    log_event("patterns.written", {{"out", dir.string()}, {"count", spec.pattern_count()}});
    out_ << spec.pattern_count() << " patterns written to " << dir.string() << "\n";
    return kExitOk;
  }

  int simulate(const Options& o) {
    const RigConfig rig = load_rig(o.rig);
    const Scene scene = load_scene(o.scene);
    const Device& proj = rig.get(o.projector, DeviceRole::projector);
    rig.get(o.camera, DeviceRole::camera);
    if (o.sigma < 0.0) throw InvalidArgument("--sigma must be non-negative");
    const PatternSpec spec{proj.width, proj.height, !o.no_inverses, !o.no_references};
    const fs::path dir = require_out(o);
    const RenderOutput r = render(scene, rig, o.camera, o.projector, spec, {o.sigma, o.seed});
    write_stack(dir, spec, r.stack);
    write_file(dir / "gt_points.f32", encode_truth_array(truth_points_array(r)));
    write_file(dir / "gt_projector.f32", encode_truth_array(truth_projector_array(r)));
    save_correspondence(dir / "correspondence_gt.json", truth_correspondence(r));
    const json meta = {{"version", 1},
                       {"camera_id", o.camera},
                       {"projector_id", o.projector},
                       {"noise_sigma", o.sigma},
                       {"seed", o.seed},
                       {"lit_pixels", truth_pixel_correspondence(r).decoded_count()}};
    write_file(dir / kCaptureFile, meta.dump(2) + "\n");
    log_event("simulate.done", {{"out", dir.string()}, {"patterns", spec.pattern_count()}});
    out_ << "rendered " << spec.pattern_count() << " images (" << r.width << "x" << r.height << ") to "
         << dir.string() << "\n";
    return kExitOk;
  }

  int decode(const Options& o) {
    if (o.threshold < 0.0 || o.threshold > 1.0) throw InvalidArgument("--threshold must lie in [0, 1]");
    StackSource s = load_stack_source(o.in);
    const std::string cam = !o.decode_camera.empty() ? o.decode_camera : s.camera_id;
    if (cam.empty()) throw InvalidArgument("decode: no camera id in the input; pass --camera");
    const fs::path dir = require_out(o);
    const CorrespondenceMap map = decode_stack(s.images, s.spec, o.threshold, cam);
    save_correspondence(dir / "correspondence.json", map);
    const double coverage = map.pixels.empty() ? 0.0 : static_cast<double>(map.decoded_count()) / map.pixels.size();
    log_event("decode.done", {{"camera", cam}, {"decoded", map.decoded_count()}, {"coverage", coverage}});
    out_ << "decoded " << map.decoded_count() << " of " << map.pixels.size() << " pixels\n";
    return kExitOk;
  }

  int reconstruct(const Options& o) {
    const RigConfig rig = load_rig(o.rig);
    if (o.max_gap < 0.0) throw InvalidArgument("--max-gap must be non-negative");
    const CorrespondenceMap a = load_correspondence(o.corr);
    Reconstruction rec;
    if (o.mode == "camera-projector") {
      rec = reconstruct_camera_projector(a, rig, a.camera_id, o.projector, o.max_gap);
    } else if (o.mode == "camera-camera") {
      if (o.corr_b.empty()) throw InvalidArgument("camera-camera mode needs --corr-b");
      rec = reconstruct_camera_camera(a, load_correspondence(o.corr_b), rig, o.max_gap);
    } else {
      throw InvalidArgument("--mode must be camera-projector or camera-camera");
    }
    json report = rec.report.to_json();
    if (!o.truth.empty()) {
      const TruthArray gt = decode_truth_array(read_file(o.truth));
      if (gt.channels != 3 || gt.width != static_cast<std::uint32_t>(a.width) || gt.height != static_cast<std::uint32_t>(a.height))
        throw InvalidArgument(o.truth + ": not a point array for this camera");
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& p : rec.cloud.points) {
        const auto i = (static_cast<std::size_t>(p.source_pixel.y()) * gt.width + static_cast<std::size_t>(p.source_pixel.x())) * 3;
        const Vec3 t(gt.values[i], gt.values[i + 1], gt.values[i + 2]);
        if (!t.allFinite()) continue;
        sum += (p.position - t).squaredNorm();
        ++n;
      }
      report["truth_points"] = n;
      report["rms_error"] = n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
    }
    const fs::path dir = require_out(o);
    export_ply(rec.cloud, dir / "cloud.ply");
    write_file(dir / "report.json", report.dump(2) + "\n");
    log_event("reconstruct.done", report);
    out_ << report.dump() << "\n";
    return kExitOk;
  }

  int calibrate(const Options& o) {
    RigConfig rig = load_rig(o.rig);
    const fs::path dir = require_out(o);
    CalibObservation obs;
    if (o.synthesize > 0) {
      obs = synthesize_observations(rig.get(o.camera, DeviceRole::camera), o.synthesize, o.min_range, o.max_range,
                                    o.sigma, o.seed);
      write_file(dir / "observations.json", observations_json(obs).dump(2) + "\n");
    } else {
      if (o.obs.empty()) throw InvalidArgument("calibrate needs --obs or --synthesize");
      obs = load_observations(o.obs);
    }
    InterfaceEstimate init = default_initial_estimate();
    init.normal = parse_vec3(o.init_normal).normalized();
    init.distance = o.init_distance;
    const InterfaceEstimate est = estimate_interface(obs, rig, init);
    const double eta = rig.get(obs.camera_id, DeviceRole::camera).interface.eta;
    const json patch = estimate_patch_json(obs.camera_id, est, eta);
    write_file(dir / "interface_patch.json", patch.dump(2) + "\n");
    log_event("calibrate.done", patch.at("calibration"));
    out_ << patch.dump() << "\n";
    return est.converged ? kExitOk : kExitDomain;
  }

  int devices(const Options& o) {
    const RigConfig rig = load_rig(o.rig);
    const auto bench = make_bench(rig, o, env_port_base().value_or(0));
    const json ep = endpoints_json(*bench);
    if (!o.out.empty()) write_file(require_out(o) / "endpoints.json", ep.dump(2) + "\n");
    out_ << ep.dump() << std::endl;
    log_event("devices.listening", ep);
    wait_until(o.duration);
    return kExitOk;
  }

  int orchestrate(const Options& o) {
    const RigConfig rig = load_rig(o.rig);
    const auto schedule = control::Schedule::parse(o.schedule);
    if (!o.sink.starts_with("dir:") || o.sink.size() <= 4) throw InvalidArgument("--sink must be dir:<path>");
    if (o.simulate == !o.endpoints.empty()) throw InvalidArgument("give exactly one of --simulate or --endpoints");
    if (schedule.mode == control::Schedule::Mode::on_demand && !o.once)
      throw InvalidArgument("on_demand schedule needs --once");
    const PatternSpec spec = pattern_spec(rig, o);

    std::unique_ptr<control::SimulatedBench> bench;
    control::ControllerConfig cfg;
    control::RetryPolicy policy;
    policy.retries = o.retries;
    policy.initial_backoff = std::chrono::milliseconds(o.backoff_ms);
    policy.reply_timeout = std::chrono::milliseconds(o.timeout_ms);
    if (o.simulate) {
      bench = make_bench(rig, o, env_port_base().value_or(0));
      cfg = control::bench_controller_config(*bench, policy);
    } else {
      const EndpointFile ep = endpoints_from_json(json::parse(read_file(o.endpoints)));
      cfg.relay = {o.host, ep.relay};
      for (const auto& [id, port] : ep.devices) cfg.devices[id] = {o.host, port};
      cfg.relay_ports = ep.relay_ports.empty() ? default_relay_ports(rig) : ep.relay_ports;
      cfg.policy = policy;
    }
    if (o.role != "primary" && o.role != "backup") throw InvalidArgument("--role must be primary or backup");
    const control::ControllerRole role_cfg{o.role == "primary" ? control::Role::primary : control::Role::backup,
                                           o.heartbeat, o.takeover};
    role_cfg.validate();
    cfg.name = role_cfg.role == control::Role::primary ? "pc0" : "pc1";
    control::DirectorySink sink(o.sink.substr(4));
    control::Controller controller(cfg, control::RoleState{role_cfg, false});
    std::unique_ptr<control::HeartbeatListener> listener;
    std::unique_ptr<control::HeartbeatSender> sender;
    if (role_cfg.role == control::Role::backup) {
      listener = std::make_unique<control::HeartbeatListener>("pc1", static_cast<std::uint16_t>(o.listen));
      listener->start();
      out_ << "listening for heartbeats on " << listener->port() << std::endl;
    } else if (o.peer > 0) {
      sender = std::make_unique<control::HeartbeatSender>(control::Endpoint{o.host, static_cast<std::uint16_t>(o.peer)},
                                                           "pc1", role_cfg, policy);
      sender->start();
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const auto clock_now = [] {
      return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
    };
    std::optional<std::int64_t> last_run;
    int runs = 0, failed = 0;
    const int limit = o.once ? 1 : o.max_sessions;
    while (!interrupted() && (limit <= 0 || runs < limit)) {
      if (controller.role().role() != control::Role::primary) {
        controller.observe_heartbeat_age(listener->age_seconds());
        if (controller.role().role() != control::Role::primary) {
          std::this_thread::sleep_for(std::chrono::milliseconds(50));
          continue;
        }
        out_ << "promoted to primary" << std::endl;
      }
      const auto decision = o.once ? control::TickDecision{control::Trigger{}}
                                   : control::scheduler_tick(clock_now(), schedule, last_run);
      if (std::holds_alternative<control::Trigger>(decision)) {
        last_run = clock_now();
        const auto session = controller.run_session(rig, spec, sink);
        ++runs;
        if (session.state != control::SessionState::Done) ++failed;
        out_ << session.id << " " << control::to_string(session.state) << "\n";
        continue;
      }
      const auto wait = std::get<control::Wait>(decision).seconds.value_or(1);
      const auto until = std::chrono::steady_clock::now() + std::chrono::seconds(std::max<std::int64_t>(wait, 1));
      while (!interrupted() && std::chrono::steady_clock::now() < until)
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    log_event("orchestrate.done", {{"sessions", runs}, {"failed", failed}});
    return failed == 0 ? kExitOk : kExitDomain;
  }

  int relay(const Options& o) {
    if (o.sets.empty() && !o.get) throw InvalidArgument("relay needs --set and/or --get");
    std::uint16_t port = static_cast<std::uint16_t>(o.port);
    if (port == 0) {
      const auto base = env_port_base();
      if (!base) throw InvalidArgument(std::string("relay needs --port or ") + kPortBaseEnv);
      port = *base;
    }
    std::vector<control::SetCmd> cmds;
    for (const auto& s : o.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw InvalidArgument("--set expects <port>=on|off, got '" + s + "'");
      const std::string name = s.substr(0, eq);
      std::string value = s.substr(eq + 1);
      for (auto& c : value) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (value != "on" && value != "off") throw InvalidArgument("--set value must be on or off");
      if (!control::resolve_relay_port(name)) throw InvalidArgument("unknown relay port '" + name + "'");
      cmds.push_back({name, value == "on"});
    }
    control::RetryPolicy policy;
    policy.retries = o.retries;
    policy.initial_backoff = std::chrono::milliseconds(o.backoff_ms);
    policy.reply_timeout = std::chrono::milliseconds(o.timeout_ms);
    control::DeviceClient client({o.host, port}, "relay", "relay0", policy);
    client.connect();
    std::string state;
    for (const auto& c : cmds) state = client.expect_ok(c).argument;
    if (o.get || state.empty()) state = client.expect_ok(control::GetCmd{}).argument;
    out_ << state << "\n";
    return kExitOk;
  }

 private:
  fs::path require_out(const Options& o) {
    if (o.out.empty()) throw InvalidArgument("--out is required");
    fs::create_directories(o.out);
    return o.out;
  }

  static PatternSpec pattern_spec(const RigConfig& rig, const Options& o) {
    const auto projs = rig.projectors();
    if (projs.empty()) throw InvalidArgument("rig has no projector");
    PatternSpec spec{o.pattern_width > 0 ? o.pattern_width : projs.front()->width,
                     o.pattern_height > 0 ? o.pattern_height : projs.front()->height, true, true};
    spec.validate();
    return spec;
  }

  static std::unique_ptr<control::SimulatedBench> make_bench(const RigConfig& rig, const Options& o,
                                                             std::uint16_t base_port) {
    control::SimulatedBench::Options bo;
    bo.base_port = base_port;
    bo.camera_width = o.camera_width;
    bo.camera_height = o.camera_height;
    return std::make_unique<control::SimulatedBench>(rig, pattern_spec(rig, o), bo);
  }

  static void wait_until(double seconds) {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const auto start = std::chrono::steady_clock::now();
    while (!interrupted()) {
      if (seconds > 0.0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= seconds)
        break;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }

  std::ostream& out_;
  std::ostream& err_;
};

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"uw3d: structured-light reconstruction and capture control for an underwater camera ring", "uw3d"};
  app.require_subcommand(1);
  Options o;

  auto* patterns = app.add_subcommand("patterns", "Write a gray-code pattern sequence as PGM files + manifest");
  patterns->add_option("--width", o.width, "Projector width")->check(CLI::PositiveNumber);
  patterns->add_option("--height", o.height, "Projector height")->check(CLI::PositiveNumber);
  patterns->add_flag("--no-inverses", o.no_inverses, "Omit inverse bit planes");
  patterns->add_flag("--no-references", o.no_references, "Omit white/black references");
  patterns->add_option("--out", o.out, "Output directory")->required();

  auto* simulate = app.add_subcommand("simulate", "Render a synthetic capture of a scene");
  simulate->add_option("--scene", o.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--rig", o.rig, "Rig JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--camera", o.camera, "Camera id");
  simulate->add_option("--projector", o.projector, "Projector id");
  simulate->add_option("--sigma", o.sigma, "Gaussian intensity noise (levels)");
  simulate->add_option("--seed", o.seed, "Noise seed");
  simulate->add_flag("--no-inverses", o.no_inverses, "Omit inverse bit planes");
  simulate->add_flag("--no-references", o.no_references, "Omit white/black references");
  simulate->add_option("--out", o.out, "Output directory")->required();

  auto* decode = app.add_subcommand("decode", "Decode an image stack into a correspondence map");
  decode->add_option("--in", o.in, "Stack directory or sink camera directory")->required()->check(CLI::ExistingDirectory);
  decode->add_option("--camera", o.decode_camera, "Camera id (default: from capture metadata)");
  decode->add_option("--threshold", o.threshold, "Contrast threshold, fraction of white-black range");
  decode->add_option("--out", o.out, "Output directory")->required();

  auto* reconstruct = app.add_subcommand("reconstruct", "Triangulate correspondences into a PLY point cloud");
  reconstruct->add_option("--rig", o.rig, "Rig JSON")->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--corr", o.corr, "Correspondence JSON")->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--corr-b", o.corr_b, "Second camera's correspondence JSON")->check(CLI::ExistingFile);
  reconstruct->add_option("--mode", o.mode, "camera-projector or camera-camera");
  reconstruct->add_option("--projector", o.projector, "Projector id");
  reconstruct->add_option("--max-gap", o.max_gap, "Reject points with a larger ray gap (m)");
  reconstruct->add_option("--truth", o.truth, "Ground-truth point array for an error report")->check(CLI::ExistingFile);
  reconstruct->add_option("--out", o.out, "Output directory")->required();

  auto* calibrate = app.add_subcommand("calibrate", "Estimate a camera's port normal and distance");
  calibrate->add_option("--rig", o.rig, "Rig JSON")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--obs", o.obs, "Observations JSON")->check(CLI::ExistingFile);
  calibrate->add_option("--synthesize", o.synthesize, "Generate this many observations from the rig instead");
  calibrate->add_option("--camera", o.camera, "Camera id for --synthesize");
  calibrate->add_option("--sigma", o.sigma, "Pixel noise for --synthesize");
  calibrate->add_option("--seed", o.seed, "Seed for --synthesize");
  calibrate->add_option("--min-range", o.min_range, "Nearest synthetic target (m)");
  calibrate->add_option("--max-range", o.max_range, "Farthest synthetic target (m)");
  calibrate->add_option("--init-normal", o.init_normal, "Initial normal x,y,z");
  calibrate->add_option("--init-distance", o.init_distance, "Initial distance (m)");
  calibrate->add_option("--out", o.out, "Output directory")->required();

  auto add_bench_flags = [&](CLI::App* sub) {
    sub->add_option("--pattern-width", o.pattern_width, "Pattern width (default: projector width)");
    sub->add_option("--pattern-height", o.pattern_height, "Pattern height (default: projector height)");
    sub->add_option("--camera-width", o.camera_width, "Simulated frame width (default: rig)");
    sub->add_option("--camera-height", o.camera_height, "Simulated frame height (default: rig)");
  };
  auto* devices = app.add_subcommand("devices", "Run simulated relay, projectors and cameras");
  devices->add_option("--rig", o.rig, "Rig JSON")->required()->check(CLI::ExistingFile);
  add_bench_flags(devices);
  devices->add_option("--duration", o.duration, "Seconds to serve (0: until interrupted)");
  devices->add_option("--out", o.out, "Directory for endpoints.json");

  auto add_client_flags = [&](CLI::App* sub) {
    sub->add_option("--retries", o.retries, "Transport retries per command")->check(CLI::NonNegativeNumber);
    sub->add_option("--backoff-ms", o.backoff_ms, "Initial retry backoff")->check(CLI::NonNegativeNumber);
    sub->add_option("--timeout-ms", o.timeout_ms, "Reply timeout")->check(CLI::PositiveNumber);
  };
  auto* orchestrate = app.add_subcommand("orchestrate", "Run scheduled capture sessions");
  orchestrate->add_option("--rig", o.rig, "Rig JSON")->required()->check(CLI::ExistingFile);
  orchestrate->add_option("--schedule", o.schedule, "on_demand, interval:<s> or daily:HH:MM");
  orchestrate->add_option("--sink", o.sink, "dir:<path>")->required();
  orchestrate->add_flag("--simulate", o.simulate, "Start simulated devices in-process");
  orchestrate->add_option("--endpoints", o.endpoints, "endpoints.json from `devices`")->check(CLI::ExistingFile);
  orchestrate->add_option("--host", o.host, "Device host");
  orchestrate->add_flag("--once", o.once, "Run one session now and exit");
  orchestrate->add_option("--max-sessions", o.max_sessions, "Stop after this many sessions");
  orchestrate->add_option("--role", o.role, "primary or backup (a backup waits for the primary's heartbeat to stop)");
  orchestrate->add_option("--peer", o.peer, "Backup controller's heartbeat port (primary only)");
  orchestrate->add_option("--listen", o.listen, "Heartbeat port to listen on (backup only; 0: ephemeral)");
  orchestrate->add_option("--heartbeat", o.heartbeat, "Heartbeat period (s)");
  orchestrate->add_option("--takeover", o.takeover, "Heartbeat silence before a backup takes over (s)");
  add_bench_flags(orchestrate);
  add_client_flags(orchestrate);

  auto* relay = app.add_subcommand("relay", "Switch or query relay ports");
  relay->add_option("--set", o.sets, "<port>=on|off (name or index)");
  relay->add_flag("--get", o.get, "Print the 16-port state");
  relay->add_option("--host", o.host, "Relay host");
  relay->add_option("--port", o.port, std::string("Relay TCP port (default: $") + kPortBaseEnv + ")");
  add_client_flags(relay);

  if (args.empty()) {
    err << app.help();
    return kExitUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  Runner runner(out, err);
  try {
    if (*patterns) return runner.patterns(o);
    if (*simulate) return runner.simulate(o);
    if (*decode) return runner.decode(o);
    if (*reconstruct) return runner.reconstruct(o);
    if (*calibrate) return runner.calibrate(o);
    if (*devices) return runner.devices(o);
    if (*orchestrate) return runner.orchestrate(o);
    if (*relay) return runner.relay(o);
  } catch (const std::exception& e) {
    log_event("cli.error", {{"message", e.what()}});
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  err << app.help();
  return kExitUsage;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace uw3d::cli
