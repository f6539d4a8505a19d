#pragma once

// Refraction-aware two-ray triangulation of decoded correspondences.

#include <cmath>
#include <cstring>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uw3d/error.hpp"
#include "uw3d/graycode.hpp"
#include "uw3d/optics.hpp"
#include "uw3d/rig.hpp"

namespace uw3d {

inline constexpr double kDefaultMaxGap = 0.002;  // meters

struct Triangulation {
  Vec3 point;
  double gap = 0.0;  // length of the mutual perpendicular
  double s = 0.0;    // parameter along ray a
  double t = 0.0;    // parameter along ray b
};

// Midpoint of the shortest segment joining two rays' supporting lines.
inline Triangulation triangulate_rays(const Ray& a, const Ray& b) {
  const Vec3& d1 = a.direction;
  const Vec3& d2 = b.direction;
  if (d1.cross(d2).norm() <= 1e-12) throw GeometryError("triangulate_rays: rays are parallel");
  const Vec3 w0 = a.origin - b.origin;
  const double aa = d1.dot(d1);
  const double bb = d1.dot(d2);
  const double cc = d2.dot(d2);
  const double dd = d1.dot(w0);
  const double ee = d2.dot(w0);
  const double denom = aa * cc - bb * bb;
  const double s = (bb * ee - cc * dd) / denom;
  const double t = (aa * ee - bb * dd) / denom;
  const Vec3 p1 = a.origin + s * d1;
  const Vec3 p2 = b.origin + t * d2;
  return {0.5 * (p1 + p2), (p1 - p2).norm(), s, t};
}

struct CloudPoint {
  Vec3 position;
  double gap = 0.0;
  Vec2 source_pixel;  // pixel in the source camera
  Vec2 match_pixel;   // projector pixel or pixel in the second camera
};

struct PointCloud {
  std::string source_device;
  std::string match_device;
  std::vector<CloudPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct TriangulationReport {
  std::size_t total = 0;                 // correspondences considered
  std::size_t triangulated = 0;          // kept in the cloud
  std::size_t rejected_by_gap = 0;
  std::size_t rejected_by_geometry = 0;  // parallel rays, point behind a device, no port crossing
  double rms_gap = 0.0;                  // over kept points, meters
  double coverage = 0.0;                 // decoded fraction of camera pixels

  nlohmann::json to_json() const {
    return {{"total", total},
            {"triangulated", triangulated},
            {"rejected_by_gap", rejected_by_gap},
            {"rejected_by_geometry", rejected_by_geometry},
            {"rms_gap", rms_gap},
            {"coverage", coverage}};
  }
};

struct Reconstruction {
  PointCloud cloud;
  TriangulationReport report;
};

namespace detail {

inline void add_pair(Reconstruction& out, const Ray& a, const Ray& b, const Vec2& pa, const Vec2& pb, double max_gap,
                     double& gap_sq) {
  ++out.report.total;
  Triangulation tri;
  try {
    tri = triangulate_rays(a, b);
  } catch (const GeometryError&) {
    ++out.report.rejected_by_geometry;
    return;
  }
  if (!(tri.s > 0.0) || !(tri.t > 0.0)) {
    ++out.report.rejected_by_geometry;
    return;
  }
  if (tri.gap > max_gap) {
    ++out.report.rejected_by_gap;
    return;
  }
  ++out.report.triangulated;
  gap_sq += tri.gap * tri.gap;
  out.cloud.points.push_back({tri.point, tri.gap, pa, pb});
}

inline void finish(Reconstruction& out, double gap_sq, const CorrespondenceMap& map) {
  if (out.report.triangulated > 0) out.report.rms_gap = std::sqrt(gap_sq / static_cast<double>(out.report.triangulated));
  const auto n = static_cast<double>(map.pixels.size());
  out.report.coverage = n > 0 ? static_cast<double>(map.decoded_count()) / n : 0.0;
}

inline void check_map(const CorrespondenceMap& map, const Device& cam) {
  if (map.width != cam.width || map.height != cam.height)
    throw InvalidArgument("correspondence map " + std::to_string(map.width) + "x" + std::to_string(map.height) +
                          " does not match camera '" + cam.id + "' resolution");
  if (map.pixels.size() != static_cast<std::size_t>(map.width) * map.height)
    throw InvalidArgument("correspondence map: pixel count does not match dimensions");
}

inline bool try_ray(const Device& dev, const Vec2& px, Ray& out) {
  try {
    out = dev.underwater_ray(px);
    return true;
  } catch (const GeometryError&) {
    return false;
  }
}

}  // namespace detail

// Triangulates each decoded camera pixel against the projector pixel that lit
// it. Points are emitted in row-major camera-pixel order.
inline Reconstruction reconstruct_camera_projector(const CorrespondenceMap& map, const RigConfig& rig,
                                                   const std::string& camera_id, const std::string& projector_id,
                                                   double max_gap = kDefaultMaxGap) {
  const Device& cam = rig.get(camera_id, DeviceRole::camera);
  const Device& proj = rig.get(projector_id, DeviceRole::projector);
  detail::check_map(map, cam);
  if (max_gap < 0.0) throw InvalidArgument("max_gap must be non-negative");

  Reconstruction out;
  out.cloud.source_device = camera_id;
  out.cloud.match_device = projector_id;
  double gap_sq = 0.0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const auto& px = map.at(x, y);
      if (!px.decoded()) continue;
      const Vec2 pc(x, y);
      const Vec2 pp(px.proj_x, px.proj_y);
      Ray a, b;
      if (!detail::try_ray(cam, pc, a) || !detail::try_ray(proj, pp, b)) {
        ++out.report.total;
        ++out.report.rejected_by_geometry;
        continue;
      }
      detail::add_pair(out, a, b, pc, pp, max_gap, gap_sq);
    }
  }
  detail::finish(out, gap_sq, map);
  return out;
}

namespace detail {

struct CodeHash {
  std::size_t operator()(const std::pair<double, double>& c) const noexcept {
    std::uint64_t a, b;
    std::memcpy(&a, &c.first, sizeof a);
    std::memcpy(&b, &c.second, sizeof b);
    return std::hash<std::uint64_t>{}(a * 0x9E3779B97F4A7C15ULL ^ b);
  }
};

inline constexpr std::size_t kCollision = static_cast<std::size_t>(-1);

// code -> pixel index, or kCollision when the code appears more than once.
inline std::unordered_map<std::pair<double, double>, std::size_t, CodeHash> index_codes(const CorrespondenceMap& m) {
  std::unordered_map<std::pair<double, double>, std::size_t, CodeHash> idx;
  idx.reserve(m.pixels.size());
  for (std::size_t i = 0; i < m.pixels.size(); ++i) {
    const auto& p = m.pixels[i];
    if (!p.decoded()) continue;
    auto [it, inserted] = idx.try_emplace({p.proj_x, p.proj_y}, i);
    if (!inserted) it->second = kCollision;
  }
  return idx;
}

}  // namespace detail

// Matches pixels of two cameras that decoded the same projector code and
// triangulates them. A code seen more than once in either camera is dropped.
inline Reconstruction reconstruct_camera_camera(const CorrespondenceMap& map_a, const CorrespondenceMap& map_b,
                                                const RigConfig& rig, double max_gap = kDefaultMaxGap) {
  const Device& cam_a = rig.get(map_a.camera_id, DeviceRole::camera);
  const Device& cam_b = rig.get(map_b.camera_id, DeviceRole::camera);
  if (cam_a.id == cam_b.id) throw InvalidArgument("reconstruct_camera_camera: both maps belong to " + cam_a.id);
  detail::check_map(map_a, cam_a);
  detail::check_map(map_b, cam_b);
  if (max_gap < 0.0) throw InvalidArgument("max_gap must be non-negative");

  const auto codes_a = detail::index_codes(map_a);
  const auto codes_b = detail::index_codes(map_b);

  Reconstruction out;
  out.cloud.source_device = cam_a.id;
  out.cloud.match_device = cam_b.id;
  double gap_sq = 0.0;
  for (std::size_t i = 0; i < map_a.pixels.size(); ++i) {
    const auto& p = map_a.pixels[i];
    if (!p.decoded()) continue;
    const std::pair<double, double> code{p.proj_x, p.proj_y};
    if (codes_a.at(code) == detail::kCollision) continue;
    const auto it = codes_b.find(code);
    if (it == codes_b.end() || it->second == detail::kCollision) continue;
    const Vec2 pa(static_cast<double>(i % static_cast<std::size_t>(map_a.width)),
                  static_cast<double>(i / static_cast<std::size_t>(map_a.width)));
    const Vec2 pb(static_cast<double>(it->second % static_cast<std::size_t>(map_b.width)),
                  static_cast<double>(it->second / static_cast<std::size_t>(map_b.width)));
    Ray a, b;
    if (!detail::try_ray(cam_a, pa, a) || !detail::try_ray(cam_b, pb, b)) {
      ++out.report.total;
      ++out.report.rejected_by_geometry;
      continue;
    }
    detail::add_pair(out, a, b, pa, pb, max_gap, gap_sq);
  }
  detail::finish(out, gap_sq, map_a);
  return out;
}

}  // namespace uw3d
