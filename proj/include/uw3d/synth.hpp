#pragma once

// Synthetic capture: renders gray-code stacks of analytic scenes through the
// full refractive model, with per-pixel ground truth.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "uw3d/error.hpp"
#include "uw3d/graycode.hpp"
#include "uw3d/image.hpp"
#include "uw3d/optics.hpp"
#include "uw3d/reconstruct.hpp"
#include "uw3d/rig.hpp"

namespace uw3d {

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

struct Triangle {
  Vec3 a, b, c;
};

struct Primitive {
  std::variant<Plane, Sphere, Triangle> shape;
  double albedo = 1.0;
};

struct Hit {
  double t = 0.0;
  Vec3 normal;  // unit, not necessarily facing the ray
  std::size_t primitive = 0;
};

inline constexpr double kHitEpsilon = 1e-9;

inline std::optional<double> intersect(const Ray& ray, const Plane& p, double t_min) {
  const double denom = p.normal.dot(ray.direction);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = p.normal.dot(p.point - ray.origin) / denom;
  if (!(t > t_min)) return std::nullopt;
  return t;
}

inline std::optional<double> intersect(const Ray& ray, const Sphere& s, double t_min) {
  const Vec3 oc = ray.origin - s.center;
  const double b = ray.direction.dot(oc);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  double t = -b - root;
  if (!(t > t_min)) t = -b + root;
  if (!(t > t_min)) return std::nullopt;
  return t;
}

// Moller-Trumbore.
inline std::optional<double> intersect(const Ray& ray, const Triangle& tri, double t_min) {
  const Vec3 e1 = tri.b - tri.a;
  const Vec3 e2 = tri.c - tri.a;
  const Vec3 pv = ray.direction.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-15) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tv = ray.origin - tri.a;
  const double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qv = tv.cross(e1);
  const double v = ray.direction.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qv) * inv;
  if (!(t > t_min)) return std::nullopt;
  return t;
}

struct Scene {
  std::vector<Primitive> primitives;

  void validate() const {
    if (primitives.empty()) throw InvalidArgument("scene: needs at least one primitive");
    for (const auto& p : primitives) {
      if (p.albedo < 0.0 || p.albedo > 1.0) throw InvalidArgument("scene: albedo must lie in [0, 1]");
      if (const auto* s = std::get_if<Sphere>(&p.shape); s && !(s->radius > 0.0))
        throw InvalidArgument("scene: sphere radius must be positive");
      if (const auto* pl = std::get_if<Plane>(&p.shape); pl && pl->normal.norm() < 1e-12)
        throw InvalidArgument("scene: plane normal must be nonzero");
      if (const auto* t = std::get_if<Triangle>(&p.shape); t && (t->b - t->a).cross(t->c - t->a).norm() < 1e-15)
        throw InvalidArgument("scene: degenerate triangle");
    }
  }

  // Nearest hit with t in (t_min, t_max).
  std::optional<Hit> intersect(const Ray& ray, double t_min = kHitEpsilon,
                               double t_max = std::numeric_limits<double>::infinity()) const {
    std::optional<Hit> best;
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      const auto t = std::visit([&](const auto& s) { return uw3d::intersect(ray, s, t_min); }, primitives[i].shape);
      if (!t || *t >= t_max || (best && *t >= best->t)) continue;
      best = Hit{*t, surface_normal(primitives[i], ray.at(*t)), i};
    }
    return best;
  }

  static Vec3 surface_normal(const Primitive& p, const Vec3& x) {
    if (const auto* pl = std::get_if<Plane>(&p.shape)) return pl->normal.normalized();
    if (const auto* s = std::get_if<Sphere>(&p.shape)) return (x - s->center).normalized();
    const auto& t = std::get<Triangle>(p.shape);
    return (t.b - t.a).cross(t.c - t.a).normalized();
  }
};

// --------------------------------------------------------------------------
// Scene JSON: {"primitives": [{"type": "plane", "point": [..], "normal": [..],
// "albedo": 1}, {"type": "sphere", "center": [..], "radius": r},
// {"type": "triangle", "vertices": [[..], [..], [..]]}]}

inline nlohmann::json scene_json(const Scene& scene) {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : scene.primitives) {
    nlohmann::json j;
    if (const auto* pl = std::get_if<Plane>(&p.shape)) {
      j = {{"type", "plane"}, {"point", detail::vec_json(pl->point)}, {"normal", detail::vec_json(pl->normal)}};
    } else if (const auto* s = std::get_if<Sphere>(&p.shape)) {
      j = {{"type", "sphere"}, {"center", detail::vec_json(s->center)}, {"radius", s->radius}};
    } else {
      const auto& t = std::get<Triangle>(p.shape);
      j = {{"type", "triangle"},
           {"vertices", {detail::vec_json(t.a), detail::vec_json(t.b), detail::vec_json(t.c)}}};
    }
    j["albedo"] = p.albedo;
    prims.push_back(std::move(j));
  }
  return {{"primitives", prims}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  try {
    for (const auto& p : j.at("primitives")) {
      const auto type = p.at("type").get<std::string>();
      Primitive prim;
      prim.albedo = p.value("albedo", 1.0);
      if (type == "plane") {
        prim.shape = Plane{detail::json_vec3(p.at("point")), detail::json_vec3(p.at("normal")).normalized()};
      } else if (type == "sphere") {
        prim.shape = Sphere{detail::json_vec3(p.at("center")), p.at("radius").get<double>()};
      } else if (type == "triangle") {
        const auto& v = p.at("vertices");
        if (v.size() != 3) throw InvalidArgument("scene: triangle needs 3 vertices");
        prim.shape = Triangle{detail::json_vec3(v[0]), detail::json_vec3(v[1]), detail::json_vec3(v[2])};
      } else {
        throw InvalidArgument("scene: unknown primitive type '" + type + "'");
      }
      scene.primitives.push_back(prim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("scene: ") + e.what());
  }
  scene.validate();
  return scene;
}

inline Scene load_scene(const std::filesystem::path& path) {
  try {
    return scene_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("scene " + path.string() + ": " + e.what());
  }
}

// Seabed plane through the origin (z up).
inline Scene plane_scene(double albedo = 1.0) {
  return Scene{{Primitive{Plane{Vec3::Zero(), Vec3::UnitZ()}, albedo}}};
}

// Seabed with a dome and a tilted slab standing in for a reef.
inline Scene reef_scene() {
  Scene s;
  s.primitives.push_back({Plane{Vec3::Zero(), Vec3::UnitZ()}, 0.8});
  s.primitives.push_back({Sphere{Vec3(0.02, -0.03, 0.0), 0.09}, 0.9});
  s.primitives.push_back({Triangle{Vec3(0.06, 0.05, 0.0), Vec3(0.16, 0.08, 0.0), Vec3(0.10, 0.10, 0.07)}, 0.7});
  return s;
}

// --------------------------------------------------------------------------
// Rendering

struct NoiseModel {
  double sigma = 0.0;  // intensity levels
  std::uint64_t seed = 0;
};

inline constexpr double kWhiteLevel = 220.0;
inline constexpr double kBlackLevel = 30.0;

struct PixelTruth {
  bool hit = false;
  Vec3 point = Vec3::Zero();   // world hit point
  bool lit = false;            // inside the projector image and not shadowed
  Vec2 projector = Vec2::Zero();  // continuous projector coordinate
  double albedo = 0.0;

  std::optional<Vec2> projector_pixel() const {
    if (!lit) return std::nullopt;
    return Vec2(std::floor(projector.x() + 0.5), std::floor(projector.y() + 0.5));
  }
};

struct RenderOutput {
  PatternSpec spec;
  std::string camera_id;
  std::string projector_id;
  int width = 0;
  int height = 0;
  std::vector<Image8> stack;      // pattern_layout(spec) order
  std::vector<PixelTruth> truth;  // row-major camera pixels

  const PixelTruth& truth_at(int x, int y) const { return truth[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

// Standard normal samples from a 64-bit Mersenne Twister via Box-Muller, so
// noise is identical across standard library implementations.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(two_pi * u2);
    has_spare_ = true;
    return mag * std::cos(two_pi * u2);
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <class F>
void parallel_rows(int height, F&& body) {
  const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(std::max(1, height / 16))));
  if (workers <= 1) {
    for (int y = 0; y < height; ++y) body(y);
    return;
  }
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int y = w; y < height; y += workers) body(y);
    });
}

}  // namespace detail

// Ground truth for one camera pixel: refracted camera ray, nearest surface,
// then the projector pixel that lights it unless the projector's underwater
// segment is blocked or the two devices see opposite faces.
inline PixelTruth trace_pixel(const Scene& scene, const Device& cam, const Device& proj, const Vec2& pixel) {
  PixelTruth out;
  Ray ray;
  try {
    ray = cam.underwater_ray(pixel);
  } catch (const GeometryError&) {
    return out;
  }
  const auto hit = scene.intersect(ray);
  if (!hit) return out;
  out.hit = true;
  out.point = ray.at(hit->t);
  out.albedo = scene.primitives[hit->primitive].albedo;

  const auto crossing = proj.project(out.point);
  if (!crossing) return out;
  const Vec2& q = crossing->pixel;
  if (!(q.x() >= -0.5 && q.x() < proj.width - 0.5 && q.y() >= -0.5 && q.y() < proj.height - 0.5)) return out;
  const Vec3 to_proj = crossing->crossing - out.point;
  if (hit->normal.dot(-ray.direction) * hit->normal.dot(to_proj) <= 0.0) return out;
  const double len = to_proj.norm();
  const Ray back{crossing->crossing, -to_proj / len};
  if (scene.intersect(back, kHitEpsilon, len * (1.0 - 1e-9) - 1e-9)) return out;
  out.lit = true;
  out.projector = q;
  return out;
}

inline RenderOutput render(const Scene& scene, const RigConfig& rig, const std::string& camera_id,
                           const std::string& projector_id, const PatternSpec& spec, const NoiseModel& noise = {}) {
  scene.validate();
  const Device& cam = rig.get(camera_id, DeviceRole::camera);
  const Device& proj = rig.get(projector_id, DeviceRole::projector);
  if (proj.width != spec.projector_width || proj.height != spec.projector_height)
    throw InvalidArgument("render: pattern spec resolution does not match projector '" + projector_id + "'");
  if (noise.sigma < 0.0) throw InvalidArgument("render: noise sigma must be non-negative");
  const auto layout = pattern_layout(spec);

  RenderOutput out;
  out.spec = spec;
  out.camera_id = camera_id;
  out.projector_id = projector_id;
  out.width = cam.width;
  out.height = cam.height;
  out.truth.resize(static_cast<std::size_t>(cam.width) * cam.height);
  detail::parallel_rows(cam.height, [&](int y) {
    for (int x = 0; x < cam.width; ++x)
      out.truth[static_cast<std::size_t>(y) * cam.width + x] = trace_pixel(scene, cam, proj, Vec2(x, y));
  });

  std::optional<detail::GaussianStream> gauss;
  if (noise.sigma > 0.0) gauss.emplace(noise.seed);
  out.stack.reserve(layout.size());
  for (const auto& d : layout) {
    Image8 img(cam.width, cam.height);
    for (std::size_t i = 0; i < out.truth.size(); ++i) {
      const auto& t = out.truth[i];
      double v = kBlackLevel;
      if (t.lit) {
        const auto px = *t.projector_pixel();
        if (pattern_lit(spec, d, static_cast<int>(px.x()), static_cast<int>(px.y())))
          v += t.albedo * (kWhiteLevel - kBlackLevel);
      }
      if (gauss) v += noise.sigma * gauss->next();
      img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
    }
    out.stack.push_back(std::move(img));
  }
  return out;
}

inline RenderOutput render(const Scene& scene, const RigConfig& rig, const std::string& camera_id,
                           const std::string& projector_id, const PatternSequence& patterns,
                           const NoiseModel& noise = {}) {
  return render(scene, rig, camera_id, projector_id, patterns.spec, noise);
}

// All ground-truth surface points, row-major, gap 0.
inline PointCloud ground_truth_cloud(const RenderOutput& r) {
  PointCloud cloud;
  cloud.source_device = r.camera_id;
  cloud.match_device = "ground-truth";
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      const auto& t = r.truth_at(x, y);
      if (t.hit) cloud.points.push_back({t.point, 0.0, Vec2(x, y), t.projector});
    }
  return cloud;
}

// Exact (continuous) projector coordinates for every lit pixel.
inline CorrespondenceMap truth_correspondence(const RenderOutput& r) {
  CorrespondenceMap m(r.camera_id, r.width, r.height);
  for (std::size_t i = 0; i < r.truth.size(); ++i) {
    const auto& t = r.truth[i];
    if (!t.lit) continue;
    m.pixels[i] = {t.projector.x(), t.projector.y(), 1.0};
  }
  return m;
}

// Integer projector pixel per camera pixel, as an ideal decoder would report.
inline CorrespondenceMap truth_pixel_correspondence(const RenderOutput& r) {
  CorrespondenceMap m(r.camera_id, r.width, r.height);
  for (std::size_t i = 0; i < r.truth.size(); ++i) {
    if (const auto p = r.truth[i].projector_pixel()) m.pixels[i] = {p->x(), p->y(), 1.0};
  }
  return m;
}

// --------------------------------------------------------------------------
// Ground-truth arrays on disk:
//   bytes 0..7   magic "UW3DGT01"
//   bytes 8..23  uint32 LE width, height, channels, reserved (0)
//   then width*height*channels float32 LE, row-major, NaN where undefined.

inline constexpr char kTruthMagic[8] = {'U', 'W', '3', 'D', 'G', 'T', '0', '1'};

struct TruthArray {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_truth_array(const TruthArray& a) {
  std::string out(kTruthMagic, sizeof kTruthMagic);
  detail::put_u32(out, a.width);
  detail::put_u32(out, a.height);
  detail::put_u32(out, a.channels);
  detail::put_u32(out, 0);
  for (float f : a.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline TruthArray decode_truth_array(const std::string& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kTruthMagic, sizeof kTruthMagic) != 0)
    throw IoError("truth array: bad magic");
  TruthArray a{detail::get_u32(bytes, 8), detail::get_u32(bytes, 12), detail::get_u32(bytes, 16), {}};
  const std::size_t n = static_cast<std::size_t>(a.width) * a.height * a.channels;
  if (bytes.size() != 24 + 4 * n) throw IoError("truth array: size does not match header");
  a.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.values[i] = std::bit_cast<float>(detail::get_u32(bytes, 24 + 4 * i));
  return a;
}

inline TruthArray truth_points_array(const RenderOutput& r) {
  TruthArray a{static_cast<std::uint32_t>(r.width), static_cast<std::uint32_t>(r.height), 3, {}};
  a.values.reserve(r.truth.size() * 3);
  for (const auto& t : r.truth)
    for (int c = 0; c < 3; ++c)
      a.values.push_back(t.hit ? static_cast<float>(t.point[c]) : std::numeric_limits<float>::quiet_NaN());
  return a;
}

inline TruthArray truth_projector_array(const RenderOutput& r) {
  TruthArray a{static_cast<std::uint32_t>(r.width), static_cast<std::uint32_t>(r.height), 2, {}};
  a.values.reserve(r.truth.size() * 2);
  for (const auto& t : r.truth)
    for (int c = 0; c < 2; ++c)
      a.values.push_back(t.lit ? static_cast<float>(t.projector[c]) : std::numeric_limits<float>::quiet_NaN());
  return a;
}

}  // namespace uw3d
