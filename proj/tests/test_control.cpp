#include <algorithm>
#include <chrono>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "uw3d/control/failover.hpp"
#include "uw3d/control/scheduler.hpp"
#include "uw3d/control/session.hpp"

using namespace uw3d;
using namespace uw3d::control;
using namespace std::chrono_literals;

namespace {

RetryPolicy fast_policy() {
  RetryPolicy p;
  p.retries = 2;
  p.initial_backoff = net::Millis(5);
  p.reply_timeout = net::Millis(300);
  p.connect_timeout = net::Millis(300);
  return p;
}

SessionOptions named(std::string id) {
  SessionOptions o;
  o.session_id = std::move(id);
  return o;
}

SessionOptions only(std::string camera) {
  SessionOptions o;
  o.camera_ids = {std::move(camera)};
  return o;
}

RoleState primary() { return RoleState{{Role::primary, 1.0, 5.0}, false}; }

SimulatedBench::Options small_frames() {
  SimulatedBench::Options o;
  o.camera_width = 64;
  o.camera_height = 48;
  return o;
}

class QuietLog : public ::testing::Environment {
 public:
  void SetUp() override { EventLog::instance().silence(); }
};
const auto* const kQuiet = ::testing::AddGlobalTestEnvironment(new QuietLog);

template <class T>
T parsed(const std::string& line) {
  const auto r = parse_command(line);
  EXPECT_TRUE(std::holds_alternative<Command>(r)) << line;
  return std::get<T>(std::get<Command>(r));
}

bool parse_fails(const std::string& line) { return std::holds_alternative<ParseFailure>(parse_command(line)); }

}  // namespace

TEST(Protocol, ParseAndFormatRoundTrip) {
  EXPECT_EQ(parsed<SetCmd>("SET cam3 ON").port, "cam3");
  EXPECT_TRUE(parsed<SetCmd>("SET 4 ON\r").on);
  EXPECT_EQ(parsed<ShowCmd>("SHOW 41").pattern, 41);
  EXPECT_EQ(parsed<CaptureCmd>("CAPTURE pc0-0001 7").session, "pc0-0001");
  EXPECT_EQ(parsed<BeatCmd>("BEAT primary 12").seq, 12u);
  EXPECT_EQ(parsed<HelloCmd>("HELLO camera cam0").device_type, "camera");
  const std::vector<Command> cmds = {HelloCmd{"relay", "relay0"}, SetCmd{"proj1", false}, GetCmd{}, ShowCmd{3},
                                     BlankCmd{}, CaptureCmd{"s-1", 0}, BeatCmd{"backup", 99}};
  for (const auto& c : cmds) {
    const auto line = format_command(c);
    const auto back = parse_command(line);
    ASSERT_TRUE(std::holds_alternative<Command>(back)) << line;
    EXPECT_EQ(format_command(std::get<Command>(back)), line);
  }
}

TEST(Protocol, MalformedCommands) {
  for (const char* bad : {"", "   ", "set cam0 ON", "SET cam0", "SET cam0 MAYBE", "SHOW -1", "SHOW x", "SHOW 1 2",
                          "GET 1", "BLANK now", "CAPTURE s", "CAPTURE s 1x", "BEAT leader 1", "HELLO camera",
                          "FROB", "HELLO camera c@m"})
    EXPECT_TRUE(parse_fails(bad)) << bad;
}

TEST(Protocol, Replies) {
  EXPECT_TRUE(parse_reply("OK")->ok);
  EXPECT_EQ(parse_reply("OK 00FF\r")->argument, "00FF");
  EXPECT_FALSE(parse_reply("ERR unknown-port")->ok);
  EXPECT_EQ(parse_reply("ERR unknown-port")->argument, "unknown-port");
  EXPECT_FALSE(parse_reply("MAYBE").has_value());
}

TEST(Relay, StateEncoding) {
  RelayState r;
  EXPECT_EQ(format_relay_bits(r.bits()), "0000");
  EXPECT_EQ(r.set("cam0", true), 0x0001);
  EXPECT_EQ(r.set("cam0", true), 0x0001);
  EXPECT_EQ(r.set("proj0", true), 0x0101);
  EXPECT_EQ(format_relay_bits(r.set(15, true)), "8101");
  EXPECT_EQ(format_relay_bits(0xABCD), "ABCD");
  EXPECT_EQ(parse_relay_bits("ABCD"), 0xABCD);
  EXPECT_FALSE(parse_relay_bits("ABC"));
  EXPECT_FALSE(parse_relay_bits("GGGG"));
  EXPECT_THROW(r.set(16, true), InvalidArgument);
  EXPECT_THROW(r.set("17", true), InvalidArgument);
  EXPECT_THROW(r.set("lamp", true), InvalidArgument);
  EXPECT_EQ(resolve_relay_port("pc1"), 12);
  EXPECT_EQ(resolve_relay_port("9"), 9);
  EXPECT_TRUE(is_projector_port(10));
  EXPECT_FALSE(is_projector_port(11));
}

TEST(Relay, IdempotentUnderRandomSequences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    RelayState a;
    std::uint16_t oracle = 0;
    for (int step = 0; step < 40; ++step) {
      const int idx = static_cast<int>(rng() % kRelayPorts);
      const bool on = rng() & 1U;
      const auto bits = a.set(idx, on);
      EXPECT_EQ(a.set(idx, on), bits);
      oracle = on ? static_cast<std::uint16_t>(oracle | (1U << idx)) : static_cast<std::uint16_t>(oracle & ~(1U << idx));
      ASSERT_EQ(bits, oracle);
    }
  }
}

TEST(Simulators, RelayOverTcp) {
  RelaySimulator relay;
  relay.start();
  auto sock = net::connect_tcp("127.0.0.1", relay.port(), net::Millis(500));
  auto ask = [&](const std::string& line) {
    sock.send_line(line);
    return sock.read_line(net::Millis(500)).value_or("<closed>");
  };
  EXPECT_EQ(ask("HELLO relay relay0"), std::string("OK ") + kFirmware);
  EXPECT_EQ(ask("HELLO camera relay0"), "ERR expected relay relay0");
  EXPECT_EQ(ask("GET"), "OK 0000");
  EXPECT_EQ(ask("SET cam2 ON"), "OK 0004");
  EXPECT_EQ(ask("SET cam2 ON"), "OK 0004");
  EXPECT_EQ(ask("SET 17 ON"), "ERR unknown-port 17");
  EXPECT_EQ(ask("SET proj0 ON"), "OK 0104");
  EXPECT_EQ(ask("SHOW 1"), "ERR unsupported-command");
  EXPECT_TRUE(ask("bogus").starts_with("ERR "));
  EXPECT_EQ(relay.state().bits(), 0x0104);
  EXPECT_EQ(relay.log().size(), 3u);
}

TEST(Simulators, CameraReturnsPgmOfShownPattern) {
  const PatternSpec spec{64, 32};
  ProjectorSimulator proj("proj0", spec.pattern_count());
  CameraSimulator cam("cam0", projected_pattern_source(spec, 64, 32));
  cam.set_projector_view([&] { return proj.shown(); });
  proj.start();
  cam.start();
  DeviceClient pc(Endpoint{"127.0.0.1", proj.port()}, "projector", "proj0", fast_policy());
  DeviceClient cc(Endpoint{"127.0.0.1", cam.port()}, "camera", "cam0", fast_policy());
  EXPECT_FALSE(pc.command(ShowCmd{spec.pattern_count()}).ok);
  pc.expect_ok(ShowCmd{0});
  const Image8 white = decode_pgm(cc.capture("s", 0));
  EXPECT_EQ(white.width, 64);
  EXPECT_TRUE(std::all_of(white.pixels.begin(), white.pixels.end(), [](auto v) { return v == 220; }));
  pc.expect_ok(BlankCmd{});
  const Image8 dark = decode_pgm(cc.capture("s", 1));
  EXPECT_TRUE(std::all_of(dark.pixels.begin(), dark.pixels.end(), [](auto v) { return v == 30; }));
  const auto caps = cam.captures();
  ASSERT_EQ(caps.size(), 2u);
  EXPECT_EQ(caps[0].shown, 0);
  EXPECT_FALSE(caps[1].shown.has_value());
}

TEST(Simulators, UnpoweredDeviceRefuses) {
  const PatternSpec spec{64, 32};
  SimulatedBench bench(make_ring_rig(), spec, small_frames());
  const auto cfg = bench_controller_config(bench, fast_policy());
  DeviceClient proj(cfg.devices.at("proj0"), "projector", "proj0", fast_policy());
  EXPECT_THROW(proj.connect(), DeviceError);
  DeviceClient relay(cfg.relay, "relay", "relay0", fast_policy());
  relay.expect_ok(SetCmd{"proj0", true});
  proj.connect();
  EXPECT_TRUE(proj.command(BlankCmd{}).ok);
}

TEST(Client, RetriesTransientDrop) {
  RelaySimulator relay;
  relay.start();
  relay.arm_fault({FaultKind::drop_connection, 1, false});
  DeviceClient c(Endpoint{"127.0.0.1", relay.port()}, "relay", "relay0", fast_policy());
  EXPECT_EQ(c.expect_ok(SetCmd{"cam0", true}).argument, "0001");
  EXPECT_EQ(c.expect_ok(SetCmd{"cam1", true}).argument, "0003");
  EXPECT_EQ(relay.state().bits(), 0x0003);
}

TEST(Client, GivesUpOnPersistentHang) {
  RelaySimulator relay;
  relay.start();
  relay.arm_fault({FaultKind::hang, 0, true});
  auto policy = fast_policy();
  policy.reply_timeout = net::Millis(50);
  DeviceClient c(Endpoint{"127.0.0.1", relay.port()}, "relay", "relay0", policy);
  const auto t0 = Clock::now();
  try {
    c.command(GetCmd{});
    FAIL() << "expected DeviceError";
  } catch (const DeviceError& e) {
    EXPECT_NE(std::string(e.what()).find("giving up after 3 attempts"), std::string::npos) << e.what();
  }
  EXPECT_GE(Clock::now() - t0, 150ms);
}

TEST(Client, ErrorReplyIsNotRetried) {
  RelaySimulator relay;
  relay.start();
  relay.arm_fault({FaultKind::error_reply, 0, false});
  DeviceClient c(Endpoint{"127.0.0.1", relay.port()}, "relay", "relay0", fast_policy());
  EXPECT_THROW(c.expect_ok(GetCmd{}), DeviceError);
  EXPECT_TRUE(c.command(GetCmd{}).ok);
}

TEST(Client, RefusedConnection) {
  std::uint16_t port = 0;
  {
    net::Listener l;
    port = l.port();
  }
  DeviceClient c(Endpoint{"127.0.0.1", port}, "relay", "relay0", fast_policy());
  EXPECT_THROW(c.connect(), DeviceError);
}

TEST(Session, StateMachineIsMonotone) {
  CaptureSession s;
  s.id = "t";
  EXPECT_THROW(s.advance(SessionState::Projecting), InvalidArgument);
  s.advance(SessionState::PoweringOn);
  s.advance(SessionState::Projecting);
  s.fail("boom");
  EXPECT_EQ(s.state, SessionState::Failed);
  EXPECT_THROW(s.advance(SessionState::Capturing), InvalidArgument);
  EXPECT_THROW(s.fail("again"), InvalidArgument);
  EXPECT_EQ(s.to_json()["failure_reason"], "boom");
  ASSERT_TRUE(s.power_window().has_value());
  EXPECT_LE(s.power_window()->first, s.power_window()->second);
}

TEST(Session, HappyPathEightCameras) {
  const RigConfig rig = make_ring_rig();
  const PatternSpec spec;
  ASSERT_EQ(spec.pattern_count(), 42);
  SimulatedBench bench(rig, spec, small_frames());
  Controller pc(bench_controller_config(bench, fast_policy()), primary());
  MemorySink sink;
  const auto s = pc.run_session(rig, spec, sink, named("happy"));
  EXPECT_EQ(s.state, SessionState::Done) << s.failure_reason;
  EXPECT_TRUE(s.projector_off_verified);
  EXPECT_EQ(s.images_captured, 8u * 42u);
  EXPECT_EQ(sink.count("happy"), std::make_pair(std::size_t{8 * 42}, std::size_t{1}));
  EXPECT_EQ(bench.relay().state().bits(), 0);

  std::vector<SessionState> visited;
  for (const auto& t : s.transitions) visited.push_back(t.state);
  const std::vector<SessionState> expected = {
      SessionState::Idle,       SessionState::PoweringOn, SessionState::Projecting,  SessionState::Capturing,
      SessionState::Collecting, SessionState::Uploading,  SessionState::PoweringOff, SessionState::Done};
  EXPECT_EQ(visited, expected);
  for (std::size_t i = 1; i < s.transitions.size(); ++i) EXPECT_LE(s.transitions[i - 1].time, s.transitions[i].time);

  // Every exposure saw the pattern it asked for.
  for (std::size_t k = 0; k < bench.camera_count(); ++k) {
    const auto caps = bench.camera(k).captures();
    ASSERT_EQ(caps.size(), 42u);
    for (const auto& c : caps) EXPECT_EQ(c.shown, c.requested);
  }

  // Projector power only inside the session's window.
  const auto window = s.power_window();
  ASSERT_TRUE(window.has_value());
  for (const auto& ev : bench.relay().log())
    if (ev.bits & (1U << 8)) {
      EXPECT_GE(ev.time, window->first);
      EXPECT_LE(ev.time, window->second);
    }

  const auto files = sink.files();
  const auto manifest = nlohmann::json::parse(files.at("session-happy/manifest.json"));
  EXPECT_EQ(manifest["state"], "Done");
  EXPECT_EQ(manifest["patterns"], manifest_json(spec));
  EXPECT_EQ(manifest["cameras"].size(), 8u);
  const Image8 white = decode_pgm(files.at(sink_image_path("happy", 0, 0)));
  EXPECT_EQ(white.width, 64);
  EXPECT_EQ(white.at(10, 10), 220);
}

TEST(Session, ReconstructHookUploadsCloud) {
  const RigConfig rig = make_ring_rig();
  const PatternSpec spec{64, 32};
  SimulatedBench bench(rig, spec, small_frames());
  Controller pc(bench_controller_config(bench, fast_policy()), primary());
  MemorySink sink;
  std::size_t seen = 0;
  SessionOptions opt;
  opt.session_id = "hook";
  opt.camera_ids = {"cam0", "cam1"};
  opt.reconstruct = [&](const std::vector<std::vector<Image8>>& stacks) -> std::optional<std::string> {
    seen = stacks.size() * stacks.front().size();
    return std::string("ply");
  };
  const auto s = pc.run_session(rig, spec, sink, opt);
  EXPECT_EQ(s.state, SessionState::Done) << s.failure_reason;
  EXPECT_EQ(seen, 2u * static_cast<std::size_t>(spec.pattern_count()));
  EXPECT_EQ(sink.files().at("session-hook/cloud.ply"), "ply");
}

TEST(Session, CameraDropMidSessionFailsSafely) {
  const RigConfig rig = make_ring_rig();
  const PatternSpec spec;
  SimulatedBench bench(rig, spec, small_frames());
  bench.camera(3).arm_fault({FaultKind::drop_connection, 10, true});
  Controller pc(bench_controller_config(bench, fast_policy()), primary());
  MemorySink sink;
  const auto s = pc.run_session(rig, spec, sink, named("drop"));
  EXPECT_EQ(s.state, SessionState::Failed);
  EXPECT_NE(s.failure_reason.find("cam3"), std::string::npos) << s.failure_reason;
  EXPECT_TRUE(s.projector_off_verified);
  EXPECT_FALSE(bench.relay().port_on(8));
  EXPECT_FALSE(bench.projector(0).shown().has_value());
  EXPECT_EQ(sink.count("drop"), std::make_pair(std::size_t{0}, std::size_t{1}));
  const auto manifest = nlohmann::json::parse(sink.files().at("session-drop/manifest.json"));
  EXPECT_EQ(manifest["state"], "Failed");
  EXPECT_FALSE(pc.session_active());
}

TEST(Session, RejectsConcurrentAndNonPrimary) {
  const RigConfig rig = make_ring_rig();
  const PatternSpec spec;
  SimulatedBench bench(rig, spec, small_frames());
  Controller pc(bench_controller_config(bench, fast_policy()), primary());
  MemorySink sink;
  std::optional<CaptureSession> first;
  std::jthread runner([&] { first = pc.run_session(rig, spec, sink, named("first")); });
  while (!pc.session_active() && !first) std::this_thread::sleep_for(1ms);
  EXPECT_THROW(pc.run_session(rig, spec, sink, named("second")), SessionRejected);
  runner.join();
  ASSERT_TRUE(first.has_value());
  EXPECT_EQ(first->state, SessionState::Done);
  EXPECT_EQ(sink.count("second").second, 0u);

  Controller backup(bench_controller_config(bench, fast_policy(), "pc1"), RoleState{{Role::backup, 1.0, 5.0}, false});
  EXPECT_THROW(backup.run_session(rig, spec, sink), SessionRejected);
}

TEST(Session, DirectorySinkLayout) {
  const RigConfig rig = make_ring_rig();
  const PatternSpec spec{64, 32};
  SimulatedBench bench(rig, spec, small_frames());
  Controller pc(bench_controller_config(bench, fast_policy()), primary());
  const auto root = std::filesystem::temp_directory_path() / "uw3d_test_sink";
  std::filesystem::remove_all(root);
  DirectorySink sink(root);
  const auto s = pc.run_session(rig, spec, sink, only("cam5"));
  EXPECT_EQ(s.state, SessionState::Done);
  EXPECT_EQ(s.id, "pc0-0001");
  EXPECT_TRUE(std::filesystem::exists(root / "session-pc0-0001/manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(root / "session-pc0-0001/cam0/pat000.pgm"));
  std::filesystem::remove_all(root);
}

TEST(Scheduler, IntervalExamples) {
  const auto hourly = Schedule::parse("interval:3600");
  EXPECT_EQ(scheduler_tick(3599, hourly, 0), TickDecision(Wait{1}));
  EXPECT_EQ(scheduler_tick(3600, hourly, 0), TickDecision(Trigger{}));
  EXPECT_EQ(scheduler_tick(10, hourly, std::nullopt), TickDecision(Trigger{}));
  EXPECT_EQ(scheduler_tick(10, Schedule::parse("on_demand"), std::nullopt), TickDecision(Wait{}));
  Schedule off = hourly;
  off.enabled = false;
  EXPECT_EQ(scheduler_tick(99999, off, 0), TickDecision(Wait{}));
}

TEST(Scheduler, ParseAndValidate) {
  EXPECT_EQ(Schedule::parse("daily:06:30").time_of_day, 6 * 3600 + 30 * 60);
  EXPECT_THROW(Schedule::parse("interval:59"), InvalidArgument);
  EXPECT_THROW(Schedule::parse("interval:abc"), InvalidArgument);
  EXPECT_THROW(Schedule::parse("interval:60s"), InvalidArgument);
  EXPECT_THROW(Schedule::parse("daily:24:00"), InvalidArgument);
  EXPECT_THROW(Schedule::parse("daily:12:60"), InvalidArgument);
  EXPECT_THROW(Schedule::parse("weekly"), InvalidArgument);
  EXPECT_NO_THROW(Schedule::parse("interval:60"));
}

TEST(Scheduler, DailyTriggersOncePerDayAtOrAfterTarget) {
  const auto daily = Schedule::parse("daily:02:15");
  const std::int64_t target = 2 * 3600 + 15 * 60;
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::int64_t now = static_cast<std::int64_t>(rng() % kSecondsPerDay);
    std::optional<std::int64_t> last;
    std::map<std::int64_t, int> per_day;
    std::map<std::int64_t, bool> ticked_after_target;
    for (int step = 0; step < 400; ++step) {
      now += 1 + static_cast<std::int64_t>(rng() % 1800);
      const std::int64_t day = now / kSecondsPerDay;
      const std::int64_t tod = now % kSecondsPerDay;
      const auto d = scheduler_tick(now, daily, last);
      if (tod >= target) ticked_after_target[day] = true;
      if (std::holds_alternative<Trigger>(d)) {
        ASSERT_GE(tod, target);
        ++per_day[day];
        last = now;
      } else {
        const auto w = std::get<Wait>(d).seconds;
        ASSERT_TRUE(w.has_value());
        ASSERT_GT(*w, 0);
        ASSERT_EQ((now + *w) % kSecondsPerDay, target);
      }
    }
    for (const auto& [day, after] : ticked_after_target) EXPECT_EQ(per_day[day], after ? 1 : 0) << day;
  }
}

TEST(Failover, StepExamples) {
  RoleState backup{{Role::backup, 1.0, 5.0}, false};
  EXPECT_EQ(failover_step(backup, 4.9).role(), Role::backup);
  EXPECT_EQ(failover_step(backup, 5.0).role(), Role::backup);
  const auto promoted = failover_step(backup, 5.01);
  EXPECT_EQ(promoted.role(), Role::primary);
  EXPECT_TRUE(promoted.promoted);
  EXPECT_EQ(failover_step(promoted, 0.0).role(), Role::primary);
  EXPECT_EQ(failover_step(primary(), 100.0).role(), Role::primary);
  EXPECT_THROW(failover_step(RoleState{{Role::backup, 1.0, 2.0}, false}, 0.0), InvalidArgument);
  EXPECT_TRUE(heartbeat_due(1.0, primary().config));
  EXPECT_FALSE(heartbeat_due(1.0, backup.config));
}

TEST(Failover, DiscreteEventTakeoverDelay) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const ControllerRole cfg{Role::backup, 0.5 + u(rng), 0.0};
    ControllerRole c = cfg;
    c.takeover_timeout = (3.0 + 3.0 * u(rng)) * c.heartbeat_period;
    const double kill = 10.0 * u(rng) + c.heartbeat_period;
    const double tick = 0.01;
    RoleState backup{c, false};
    double last_beat = 0.0;
    double promoted_at = -1.0;
    for (double t = 0.0; t < kill + 3.0 * c.takeover_timeout; t += tick) {
      // Beats at multiples of the period until the kill.
      const double beat = std::floor(std::min(t, kill) / c.heartbeat_period) * c.heartbeat_period;
      last_beat = std::max(last_beat, beat);
      backup = failover_step(backup, t - last_beat);
      if (backup.role() == Role::primary) {
        promoted_at = t;
        break;
      }
    }
    ASSERT_GE(promoted_at, kill) << trial;
    EXPECT_LE(promoted_at - kill, c.takeover_timeout + c.heartbeat_period + tick) << trial;
  }
}

TEST(Failover, LiveHeartbeatsAndTakeover) {
  const ControllerRole cfg{Role::primary, 0.05, 0.2};
  HeartbeatListener listener("pc1");
  listener.start();
  HeartbeatSender sender(Endpoint{"127.0.0.1", listener.port()}, "pc1", cfg, fast_policy());
  sender.start();
  std::this_thread::sleep_for(300ms);
  EXPECT_GE(sender.beats_sent(), 3u);
  EXPECT_TRUE(listener.last_sequence().has_value());
  EXPECT_LT(listener.age_seconds(), 0.2);

  ControllerConfig unused;
  Controller backup(unused, RoleState{{Role::backup, 0.05, 0.2}, false});
  const auto killed = sender.kill();
  Clock::time_point promoted;
  while (true) {
    backup.observe_heartbeat_age(listener.age_seconds());
    if (backup.role().role() == Role::primary) {
      promoted = Clock::now();
      break;
    }
    std::this_thread::sleep_for(5ms);
  }
  EXPECT_TRUE(backup.role().promoted);
  const double delay = std::chrono::duration<double>(promoted - killed).count();
  EXPECT_LE(delay, 0.2 + 0.05 + 0.05);
}
