#pragma once

// Pinhole devices behind a flat refractive port.
//
// Conventions: device frame has x right, y down, z forward. Pixel centers sit
// at integer coordinates. Pose maps device to world: X_w = R * X_d + t, so t
// is the device center in world coordinates.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "uw3d/error.hpp"

namespace uw3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDefaultEta = 1.0 / 1.33;

struct Intrinsics {
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("intrinsics: focal lengths must be positive");
  }
};

struct Pose {
  Mat3 rotation = Mat3::Identity();     // device-to-world
  Vec3 translation = Vec3::Zero();      // device center in world, meters

  Vec3 to_device(const Vec3& world) const { return rotation.transpose() * (world - translation); }
  Vec3 to_world(const Vec3& device) const { return rotation * device + translation; }

  void validate() const {
    if (((rotation.transpose() * rotation) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
      throw InvalidArgument("pose: rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-9)
      throw InvalidArgument("pose: rotation determinant is not +1");
  }

  // Device at `eye` looking at `target`; image y points away from `up`.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 z = (target - eye).normalized();
    Vec3 x = z.cross(up);
    if (x.norm() < 1e-12) throw InvalidArgument("look_at: up vector parallel to viewing direction");
    x.normalize();
    const Vec3 y = z.cross(x);
    Pose p;
    p.rotation.col(0) = x;
    p.rotation.col(1) = y;
    p.rotation.col(2) = z;
    p.translation = eye;
    return p;
  }
};

// Flat port: plane {x : normal . x = distance} in the device frame, with
// normal pointing from the device into the water. eta = n_air / n_water.
struct RefractiveInterface {
  Vec3 normal = Vec3::UnitZ();
  double distance = 0.05;
  double eta = kDefaultEta;

  void validate() const {
    if (std::abs(normal.norm() - 1.0) > 1e-9) throw InvalidArgument("interface: normal must be unit length");
    if (!(distance > 0.0)) throw InvalidArgument("interface: distance must be positive");
    if (!(eta > 0.0) || eta > 1.0) throw InvalidArgument("interface: eta must lie in (0, 1]");
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

// In-air ray through a pixel, world frame, starting at the device center.
inline Ray pixel_to_ray(const Vec2& pixel, const Intrinsics& k, const Pose& pose) {
  const double y = (pixel.y() - k.cy) / k.fy;
  const double x = (pixel.x() - k.cx) / k.fx - k.skew * (pixel.y() - k.cy) / (k.fx * k.fy);
  return {pose.translation, (pose.rotation * Vec3(x, y, 1.0)).normalized()};
}

// Pinhole projection of a device-frame point; nullopt when behind the device.
inline std::optional<Vec2> project_device_point(const Vec3& p, const Intrinsics& k) {
  if (!(p.z() > 0.0)) return std::nullopt;
  const double x = p.x() / p.z();
  const double y = p.y() / p.z();
  return Vec2(k.fx * x + k.skew * y + k.cx, k.fy * y + k.cy);
}

inline std::optional<Vec2> project_point(const Vec3& world, const Intrinsics& k, const Pose& pose) {
  return project_device_point(pose.to_device(world), k);
}

// Vector Snell's law. `n` is the unit interface normal oriented along the
// direction of travel (d . n > 0). Returns nullopt on total internal reflection.
inline std::optional<Vec3> refract_direction(const Vec3& d, const Vec3& n, double eta) {
  const double cos_i = d.dot(n);
  if (!(cos_i > 0.0)) throw GeometryError("refract_direction: direction does not cross the interface");
  const double sin2_t = eta * eta * std::max(0.0, 1.0 - cos_i * cos_i);
  if (sin2_t > 1.0) return std::nullopt;
  const double cos_t = std::sqrt(1.0 - sin2_t);
  return (eta * d + (cos_t - eta * cos_i) * n).normalized();
}

// Intersects an in-air ray with the device's port and refracts it into water.
inline Ray trace_through_interface(const Ray& ray, const RefractiveInterface& iface, const Pose& pose) {
  const Vec3 o = pose.to_device(ray.origin);
  const Vec3 d = pose.rotation.transpose() * ray.direction;
  const double denom = iface.normal.dot(d);
  if (denom <= 1e-12) throw GeometryError("trace_through_interface: ray parallel to or facing away from the port");
  const double s = (iface.distance - iface.normal.dot(o)) / denom;
  if (s < 0.0) throw GeometryError("trace_through_interface: port lies behind the ray origin");
  const Vec3 hit = o + s * d;
  const auto t = refract_direction(d, iface.normal, iface.eta);
  if (!t) throw GeometryError("trace_through_interface: total internal reflection");
  return {pose.to_world(hit), pose.rotation * *t};
}

// Underwater ray seen by a pixel.
inline Ray refractive_ray(const Vec2& pixel, const Intrinsics& k, const Pose& pose, const RefractiveInterface& iface) {
  return trace_through_interface(pixel_to_ray(pixel, k, pose), iface, pose);
}

struct InterfaceCrossing {
  Vec2 pixel;
  Vec3 crossing;  // world point where the ray passes through the port
  int iterations = 0;
};

inline constexpr int kProjectMaxIterations = 128;
inline constexpr double kProjectRootTolerance = 1e-12;

// Forward refractive model. Works in the plane of incidence spanned by the
// port normal and the point: with h the point's height above the device
// center along the normal and R its radial offset, the crossing sits at
// radius r in [0, R] on the port and satisfies
//   eta * sin(theta_air(r)) = sin(theta_water(r)).
// The residual is strictly increasing in r, so a bracket plus safeguarded
// Newton converges to the unique root.
inline std::optional<InterfaceCrossing> try_refractive_project(const Vec3& world, const Intrinsics& k,
                                                               const Pose& pose, const RefractiveInterface& iface) {
  const Vec3 p = pose.to_device(world);
  const Vec3& n = iface.normal;
  const double d = iface.distance;
  const double h = n.dot(p);
  if (!(h > d)) return std::nullopt;  // not on the water side
  const Vec3 radial = p - h * n;
  const double big_r = radial.norm();
  const double depth = h - d;

  double r = 0.0;
  int iterations = 0;
  if (big_r > 1e-15) {
    const double eta = iface.eta;
    auto f = [&](double x) {
      const double w = big_r - x;
      return eta * x / std::hypot(x, d) - w / std::hypot(w, depth);
    };
    auto df = [&](double x) {
      const double w = big_r - x;
      const double a = std::hypot(x, d);
      const double b = std::hypot(w, depth);
      return eta * d * d / (a * a * a) + depth * depth / (b * b * b);
    };
    static const double r_max_ratio = std::tan(89.0 * std::numbers::pi / 180.0);
    double lo = 0.0;
    double hi = std::min(big_r, d * r_max_ratio);
    if (f(hi) < 0.0) return std::nullopt;  // crossing beyond the imageable bracket
    r = std::clamp(big_r * d / h, lo, hi);  // pinhole guess, exact for eta = 1
    bool converged = false;
    for (iterations = 1; iterations <= kProjectMaxIterations; ++iterations) {
      const double fr = f(r);
      if (fr == 0.0) {
        converged = true;
        break;
      }
      (fr < 0.0 ? lo : hi) = r;
      double next = r - fr / df(r);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      const double step = std::abs(next - r);
      r = next;
      if (step < kProjectRootTolerance || hi - lo < kProjectRootTolerance) {
        converged = true;
        break;
      }
    }
    if (!converged) return std::nullopt;
  }
  const Vec3 q = d * n + (big_r > 1e-15 ? Vec3(r * radial / big_r) : Vec3::Zero());
  const auto pixel = project_device_point(q, k);
  if (!pixel) return std::nullopt;
  return InterfaceCrossing{*pixel, pose.to_world(q), iterations};
}

inline Vec2 refractive_project(const Vec3& world, const Intrinsics& k, const Pose& pose,
                               const RefractiveInterface& iface) {
  const auto c = try_refractive_project(world, k, pose, iface);
  if (!c) throw GeometryError("refractive_project: point outside the refractive model (no convergence)");
  return c->pixel;
}

// Distance from a point to a ray's supporting line.
inline double distance_to_ray(const Vec3& x, const Ray& ray) {
  return (x - ray.origin).cross(ray.direction).norm();
}

}  // namespace uw3d
