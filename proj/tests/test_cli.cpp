#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "uw3d/cli.hpp"

using namespace uw3d;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result uw3d_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::set<std::string> tree(const fs::path& root) {
  std::set<std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) out.insert(fs::relative(e.path(), root).string());
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    EventLog::instance().silence();
    root_ = fs::temp_directory_path() /
            ("uw3d_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    RingRigOptions o;
    o.camera_width = 320;
    o.camera_height = 256;
    o.camera_focal = 1800.0 * 320 / 1280.0;
    o.projector_width = 256;
    o.projector_height = 192;
    o.projector_focal = 1400.0 * 256 / 1024.0;
    save_rig(rig_path(), make_ring_rig(o));
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path path(const std::string& name) const { return root_ / name; }
  std::string rig_path() const { return (root_ / "rig.json").string(); }
  std::string plane_path() const { return std::string(UW3D_DATA_DIR) + "/plane.json"; }

  Result simulate(const std::string& out, double sigma = 0.0, int seed = 0) {
    return uw3d_cli({"simulate", "--scene", plane_path(), "--rig", rig_path(), "--sigma", std::to_string(sigma),
                     "--seed", std::to_string(seed), "--out", path(out).string()});
  }

  fs::path root_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(uw3d_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(uw3d_cli({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(uw3d_cli({"patterns", "--bogus", "1"}).code, cli::kExitUsage);
  EXPECT_EQ(uw3d_cli({"patterns"}).code, cli::kExitUsage);
  EXPECT_EQ(uw3d_cli({"patterns", "--width", "-4", "--out", path("p").string()}).code, cli::kExitUsage);
  EXPECT_EQ(uw3d_cli({"decode", "--in", path("missing").string(), "--out", path("d").string()}).code,
            cli::kExitUsage);
  const auto help = uw3d_cli({"--help"});
  EXPECT_EQ(help.code, cli::kExitOk);
  EXPECT_NE(help.out.find("reconstruct"), std::string::npos);
  EXPECT_EQ(uw3d_cli({"simulate", "--help"}).code, cli::kExitOk);
}

TEST_F(Cli, DomainErrors) {
  const auto bad_cam = uw3d_cli({"simulate", "--scene", plane_path(), "--rig", rig_path(), "--camera", "cam99",
                                 "--out", path("s").string()});
  EXPECT_EQ(bad_cam.code, cli::kExitDomain);
  EXPECT_NE(bad_cam.err.find("error:"), std::string::npos);
  EXPECT_EQ(uw3d_cli({"decode", "--in", root_.string(), "--out", path("d").string()}).code, cli::kExitDomain);
  EXPECT_EQ(uw3d_cli({"patterns", "--width", "1", "--out", path("p").string()}).code, cli::kExitDomain);
  EXPECT_EQ(uw3d_cli({"orchestrate", "--rig", rig_path(), "--sink", "s3://bucket", "--simulate", "--once"}).code,
            cli::kExitDomain);
  EXPECT_EQ(uw3d_cli({"orchestrate", "--rig", rig_path(), "--sink", "dir:" + path("k").string(), "--simulate"}).code,
            cli::kExitDomain);
}

TEST_F(Cli, PatternsWritesSequenceAndManifest) {
  const auto r = uw3d_cli({"patterns", "--width", "1024", "--height", "768", "--out", path("pat").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::size_t pgm = 0;
  for (const auto& f : tree(path("pat"))) pgm += f.ends_with(".pgm");
  EXPECT_EQ(pgm, 42u);
  EXPECT_TRUE(fs::exists(path("pat") / "manifest.json"));
  EXPECT_TRUE(fs::exists(path("pat") / "pat_000_ref.pgm"));
  const auto stack = read_stack(path("pat"));
  EXPECT_EQ(stack.spec.pattern_count(), 42);
  EXPECT_EQ(stack.images[2].width, 1024);
}

TEST_F(Cli, PipelineAgainstContinuousTruth) {
  ASSERT_EQ(simulate("sim").code, cli::kExitOk);
  for (const char* f : {"manifest.json", "gt_points.f32", "gt_projector.f32", "correspondence_gt.json", "capture.json"})
    EXPECT_TRUE(fs::exists(path("sim") / f)) << f;

  const auto rec = uw3d_cli({"reconstruct", "--rig", rig_path(), "--corr", (path("sim") / "correspondence_gt.json").string(),
                             "--truth", (path("sim") / "gt_points.f32").string(), "--out", path("rec").string()});
  ASSERT_EQ(rec.code, cli::kExitOk) << rec.err;
  const auto report = nlohmann::json::parse(rec.out);
  EXPECT_LT(report["rms_gap"].get<double>(), 1e-7);
  EXPECT_LT(report["rms_error"].get<double>(), 1e-6);
  EXPECT_GT(report["triangulated"].get<std::size_t>(), 10000u);

  // PLY vertices follow the decoded pixels in row-major order.
  const auto ply = read_ply(path("rec") / "cloud.ply");
  const auto corr = load_correspondence(path("sim") / "correspondence_gt.json");
  const auto gt = decode_truth_array(read_file(path("sim") / "gt_points.f32"));
  ASSERT_EQ(ply.size(), corr.decoded_count());
  double sum = 0.0;
  std::size_t v = 0;
  for (std::size_t i = 0; i < corr.pixels.size(); ++i) {
    if (!corr.pixels[i].decoded()) continue;
    for (int c = 0; c < 3; ++c) sum += std::pow(static_cast<double>(ply[v][static_cast<std::size_t>(c)]) - gt.values[3 * i + static_cast<std::size_t>(c)], 2);
    ++v;
  }
  EXPECT_LT(std::sqrt(sum / static_cast<double>(v)), 1e-6);
}

TEST_F(Cli, PipelineThroughDecode) {
  ASSERT_EQ(simulate("sim").code, cli::kExitOk);
  const auto dec = uw3d_cli({"decode", "--in", path("sim").string(), "--out", path("dec").string()});
  ASSERT_EQ(dec.code, cli::kExitOk) << dec.err;
  const auto corr = load_correspondence(path("dec") / "correspondence.json");
  EXPECT_EQ(corr.camera_id, "cam0");
  const auto meta = nlohmann::json::parse(read_file(path("sim") / "capture.json"));
  EXPECT_EQ(corr.decoded_count(), meta["lit_pixels"].get<std::size_t>());

  const auto rec = uw3d_cli({"reconstruct", "--rig", rig_path(), "--corr", (path("dec") / "correspondence.json").string(),
                             "--truth", (path("sim") / "gt_points.f32").string(), "--out", path("rec").string()});
  ASSERT_EQ(rec.code, cli::kExitOk) << rec.err;
  const auto report = nlohmann::json::parse(rec.out);
  // One projector pixel spans about 3 mm at this resolution.
  EXPECT_LT(report["rms_error"].get<double>(), 3e-3);
  EXPECT_EQ(nlohmann::json::parse(read_file(path("rec") / "report.json")), report);
}

TEST_F(Cli, SeededRunsAreByteIdentical) {
  ASSERT_EQ(simulate("a", 2.0, 7).code, cli::kExitOk);
  ASSERT_EQ(simulate("b", 2.0, 7).code, cli::kExitOk);
  ASSERT_EQ(simulate("c", 2.0, 8).code, cli::kExitOk);
  const auto files = tree(path("a"));
  EXPECT_EQ(files, tree(path("b")));
  for (const auto& f : files) EXPECT_EQ(read_file(path("a") / f), read_file(path("b") / f)) << f;
  EXPECT_NE(read_file(path("a") / "pat_002_col0.pgm"), read_file(path("c") / "pat_002_col0.pgm"));

  for (const char* run : {"a", "b"}) {
    const std::string d = std::string(run) + "_dec";
    ASSERT_EQ(uw3d_cli({"decode", "--in", path(run).string(), "--out", path(d).string()}).code, cli::kExitOk);
    ASSERT_EQ(uw3d_cli({"reconstruct", "--rig", rig_path(), "--corr", (path(d) / "correspondence.json").string(),
                        "--out", path(std::string(run) + "_rec").string()})
                  .code,
              cli::kExitOk);
  }
  EXPECT_EQ(read_file(path("a_rec") / "cloud.ply"), read_file(path("b_rec") / "cloud.ply"));
}

TEST_F(Cli, WritesOnlyInsideOut) {
  const fs::path cwd = fs::current_path();
  fs::create_directories(path("cwd"));
  fs::current_path(path("cwd"));
  const auto before = tree(root_);
  const auto r = simulate("cwd/../only");
  fs::current_path(cwd);
  ASSERT_EQ(r.code, cli::kExitOk);
  std::set<std::string> added;
  for (const auto& f : tree(root_))
    if (!before.contains(f)) added.insert(f);
  for (const auto& f : added) EXPECT_TRUE(f.starts_with("only")) << f;
  EXPECT_TRUE(tree(path("cwd")).empty());
}

TEST_F(Cli, CalibrateSynthesizedAndFromFile) {
  const auto r = uw3d_cli({"calibrate", "--rig", rig_path(), "--synthesize", "50", "--camera", "cam0", "--init-distance",
                           "0.06", "--init-normal", "0.05,0,1", "--out", path("cal").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto patch = nlohmann::json::parse(read_file(path("cal") / "interface_patch.json"));
  RigConfig rig = load_rig(rig_path());
  const double truth = rig.find("cam0")->interface.distance;
  apply_interface_patch(rig, patch);
  EXPECT_NEAR(rig.find("cam0")->interface.distance, truth, 1e-6);

  const auto again = uw3d_cli({"calibrate", "--rig", rig_path(), "--obs", (path("cal") / "observations.json").string(),
                               "--init-distance", "0.06", "--init-normal", "0.05,0,1", "--out", path("cal2").string()});
  ASSERT_EQ(again.code, cli::kExitOk) << again.err;
  EXPECT_EQ(read_file(path("cal") / "interface_patch.json"), read_file(path("cal2") / "interface_patch.json"));
  EXPECT_EQ(uw3d_cli({"calibrate", "--rig", rig_path(), "--out", path("cal3").string()}).code, cli::kExitDomain);
  EXPECT_EQ(uw3d_cli({"calibrate", "--rig", rig_path(), "--synthesize", "20", "--init-normal", "1,2",
                      "--out", path("cal4").string()})
                .code,
            cli::kExitDomain);
}

TEST_F(Cli, OrchestrateOnceThenDecodeFromSink) {
  const auto r = uw3d_cli({"orchestrate", "--rig", rig_path(), "--sink", "dir:" + path("sink").string(), "--simulate",
                           "--once", "--camera-width", "64", "--camera-height", "48", "--backoff-ms", "5"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out, "pc0-0001 Done\n");
  const fs::path session = path("sink") / "session-pc0-0001";
  const auto manifest = nlohmann::json::parse(read_file(session / "manifest.json"));
  EXPECT_EQ(manifest["state"], "Done");
  EXPECT_EQ(manifest["images_captured"], 8 * 34);
  const auto dec = uw3d_cli({"decode", "--in", (session / "cam2").string(), "--out", path("dec").string()});
  ASSERT_EQ(dec.code, cli::kExitOk) << dec.err;
  const auto corr = load_correspondence(path("dec") / "correspondence.json");
  EXPECT_EQ(corr.camera_id, "cam2");
  EXPECT_EQ(corr.decoded_count(), 64u * 48u);
}

TEST_F(Cli, DevicesAndRelay) {
  control::RelaySimulator relay;
  relay.start();
  const std::string port = std::to_string(relay.port());
  const auto on = uw3d_cli({"relay", "--port", port, "--set", "cam1=on", "--set", "proj0=ON"});
  ASSERT_EQ(on.code, cli::kExitOk) << on.err;
  EXPECT_EQ(on.out, "0102\n");
  EXPECT_EQ(uw3d_cli({"relay", "--port", port, "--get"}).out, "0102\n");
  EXPECT_EQ(uw3d_cli({"relay", "--port", port, "--set", "proj0=off"}).out, "0002\n");
  EXPECT_EQ(uw3d_cli({"relay", "--port", port, "--set", "17=on"}).code, cli::kExitDomain);
  EXPECT_EQ(uw3d_cli({"relay", "--port", port, "--set", "cam1"}).code, cli::kExitDomain);
  EXPECT_EQ(relay.state().bits(), 0x0002);

  const auto dev = uw3d_cli({"devices", "--rig", rig_path(), "--duration", "0.2", "--out", path("dev").string()});
  ASSERT_EQ(dev.code, cli::kExitOk) << dev.err;
  const auto ep = nlohmann::json::parse(read_file(path("dev") / "endpoints.json"));
  EXPECT_EQ(ep["devices"].size(), 11u);
  EXPECT_EQ(ep["relay_ports"]["proj2"], "proj2");
  EXPECT_EQ(nlohmann::json::parse(dev.out), ep);
}

TEST_F(Cli, BackupTakesOverWithoutHeartbeats) {
  const auto r = uw3d_cli({"orchestrate", "--rig", rig_path(), "--sink", "dir:" + path("sink").string(), "--simulate",
                           "--once", "--role", "backup", "--heartbeat", "0.05", "--takeover", "0.2", "--camera-width",
                           "32", "--camera-height", "24"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("promoted to primary"), std::string::npos);
  EXPECT_NE(r.out.find("pc1-0001 Done"), std::string::npos);
  EXPECT_EQ(uw3d_cli({"orchestrate", "--rig", rig_path(), "--sink", "dir:" + path("s2").string(), "--simulate",
                      "--once", "--heartbeat", "1", "--takeover", "2"})
                .code,
            cli::kExitDomain);
}
