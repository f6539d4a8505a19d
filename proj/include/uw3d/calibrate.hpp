#pragma once

// Estimation of a camera's flat-port parameters (normal, distance) from
// known underwater targets, by damped least squares on pixel reprojection.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SVD>
#include <json.hpp>

#include "uw3d/error.hpp"
#include "uw3d/image.hpp"
#include "uw3d/optics.hpp"
#include "uw3d/rig.hpp"

namespace uw3d {

inline constexpr std::size_t kMinCalibObservations = 6;
inline constexpr double kResidualSentinel = 1e6;  // pixels, for points the model cannot project

struct CalibObservation {
  std::string camera_id;
  std::vector<Vec3> target_points;  // world, meters
  std::vector<Vec2> observed_pixels;

  void validate() const {
    if (target_points.size() != observed_pixels.size())
      throw InvalidArgument("calibration: target and pixel lists differ in length");
    if (target_points.size() < kMinCalibObservations)
      throw InvalidArgument("calibration: need at least " + std::to_string(kMinCalibObservations) +
                            " observations, got " + std::to_string(target_points.size()));
  }
};

struct InterfaceEstimate {
  Vec3 normal = Vec3::UnitZ();
  double distance = 0.05;
  double rms_residual = 0.0;  // pixels
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;  // sum of squared residuals after each accepted step, starting with the initial one
};

// Normal parameterized by two angles in the tangent plane of a base normal:
// n(a, b) = cos|w| n0 + sin|w| w/|w| with w = a e1 + b e2.
struct TangentParams {
  Vec3 base_normal = Vec3::UnitZ();
  double a = 0.0;
  double b = 0.0;
  double distance = 0.05;

  Vec3 normal() const {
    const Vec3 n0 = base_normal.normalized();
    const Vec3 helper = std::abs(n0.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 e1 = n0.cross(helper).normalized();
    const Vec3 e2 = n0.cross(e1);
    const Vec3 w = a * e1 + b * e2;
    const double theta = w.norm();
    if (theta < 1e-300) return n0;
    return (std::cos(theta) * n0 + std::sin(theta) * (w / theta)).normalized();
  }

  Eigen::Vector3d vector() const { return {a, b, distance}; }
  TangentParams with(const Eigen::Vector3d& v) const { return {base_normal, v[0], v[1], v[2]}; }
};

struct Residuals {
  Eigen::VectorXd values;     // 2N, (u, v) per target
  std::vector<bool> flagged;  // per target: projection did not converge
  std::size_t flagged_count = 0;
};

inline Residuals residuals(const TangentParams& params, const CalibObservation& obs, const Device& cam) {
  obs.validate();
  RefractiveInterface iface = cam.interface;
  iface.normal = params.normal();
  iface.distance = params.distance;
  Residuals out;
  const std::size_t n = obs.target_points.size();
  out.values.resize(static_cast<Eigen::Index>(2 * n));
  out.flagged.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = params.distance > 0.0 ? try_refractive_project(obs.target_points[i], cam.intrinsics, cam.pose, iface)
                                         : std::nullopt;
    const auto idx = static_cast<Eigen::Index>(2 * i);
    if (!c) {
      out.values[idx] = out.values[idx + 1] = kResidualSentinel;
      out.flagged[i] = true;
      ++out.flagged_count;
      continue;
    }
    out.values[idx] = c->pixel.x() - obs.observed_pixels[i].x();
    out.values[idx + 1] = c->pixel.y() - obs.observed_pixels[i].y();
  }
  return out;
}

inline Residuals residuals(const TangentParams& params, const CalibObservation& obs, const RigConfig& rig) {
  return residuals(params, obs, rig.get(obs.camera_id, DeviceRole::camera));
}

inline constexpr double kAngleStep = 1e-6;     // radians
inline constexpr double kDistanceStep = 1e-6;  // meters

// Central-difference Jacobian of the residual vector with respect to (a, b, distance).
inline Eigen::MatrixXd residual_jacobian(const TangentParams& p, const CalibObservation& obs, const Device& cam) {
  const Eigen::Vector3d x = p.vector();
  const double steps[3] = {kAngleStep, kAngleStep, kDistanceStep};
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(2 * obs.target_points.size()), 3);
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d hi = x, lo = x;
    hi[k] += steps[k];
    lo[k] -= steps[k];
    jac.col(k) = (residuals(p.with(hi), obs, cam).values - residuals(p.with(lo), obs, cam).values) / (2.0 * steps[k]);
  }
  return jac;
}

struct EstimatorOptions {
  int max_iterations = 200;
  double initial_lambda = 1e-3;
  double step_tolerance = 1e-10;
  double relative_decrease_tolerance = 1e-12;
};

// Rejects target sets whose points are all (nearly) collinear.
inline void check_target_geometry(const std::vector<Vec3>& pts) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::MatrixXd centered(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) centered.row(static_cast<Eigen::Index>(i)) = (pts[i] - mean).transpose();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const auto s = svd.singularValues();
  if (s[0] < 1e-12 || s[1] < 1e-9 * s[0]) throw GeometryError("calibration: degenerate geometry (targets collinear)");
}

// Levenberg-style damped Gauss-Newton over (tangent angles, distance). The
// normal is re-based after every accepted step so the angles stay small.
inline InterfaceEstimate estimate_interface(const CalibObservation& obs, const RigConfig& rig,
                                            const InterfaceEstimate& init, const EstimatorOptions& opt = {}) {
  obs.validate();
  if (!(init.distance > 0.0)) throw InvalidArgument("calibration: initial distance must be positive");
  const Device& cam = rig.get(obs.camera_id, DeviceRole::camera);
  check_target_geometry(obs.target_points);

  TangentParams params{init.normal.normalized(), 0.0, 0.0, init.distance};
  Residuals r = residuals(params, obs, cam);
  double cost = r.values.squaredNorm();

  InterfaceEstimate est;
  est.objective.push_back(cost);
  double lambda = opt.initial_lambda;
  bool done = false;
  int it = 0;
  while (!done && it < opt.max_iterations) {
    ++it;
    if (cost == 0.0) {
      est.converged = true;
      break;
    }
    const Eigen::MatrixXd jac = residual_jacobian(params, obs, cam);
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    const Eigen::Vector3d grad = jac.transpose() * r.values;
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      const Eigen::Vector3d step = (jtj + lambda * Eigen::Matrix3d::Identity()).ldlt().solve(-grad);
      const TangentParams trial = params.with(params.vector() + step);
      const bool tiny = step.norm() < opt.step_tolerance;
      Residuals r_trial = residuals(trial, obs, cam);
      const double trial_cost = r_trial.values.squaredNorm();
      if (trial.distance > 0.0 && trial_cost < cost) {
        const double rel = (cost - trial_cost) / cost;
        params = TangentParams{trial.normal(), 0.0, 0.0, trial.distance};
        r = std::move(r_trial);
        cost = trial_cost;
        est.objective.push_back(cost);
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        if (tiny || rel < opt.relative_decrease_tolerance) {
          est.converged = true;
          done = true;
        }
      } else if (tiny) {
        // No representable improvement left.
        est.converged = true;
        done = true;
        break;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted && !done) break;  // damping exhausted
  }

  est.normal = params.normal();
  est.distance = params.distance;
  est.iterations = it;
  est.rms_residual = std::sqrt(cost / static_cast<double>(r.values.size()));
  if (r.flagged_count > 0) est.converged = false;
  return est;
}

// Default starting point: port normal along the principal axis, 5 cm away.
inline InterfaceEstimate default_initial_estimate() {
  InterfaceEstimate e;
  e.normal = Vec3::UnitZ();
  e.distance = 0.05;
  return e;
}

// --------------------------------------------------------------------------
// Synthetic targets: random pixels back-projected through the true model to
// random depths, then re-observed with optional Gaussian pixel noise.

inline CalibObservation synthesize_observations(const Device& cam, std::size_t count, double min_range,
                                                double max_range, double pixel_sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.05 * cam.width, 0.95 * cam.width);
  std::uniform_real_distribution<double> uy(0.05 * cam.height, 0.95 * cam.height);
  std::uniform_real_distribution<double> ur(min_range, max_range);
  std::normal_distribution<double> noise(0.0, 1.0);
  CalibObservation obs;
  obs.camera_id = cam.id;
  while (obs.target_points.size() < count) {
    const Vec2 px(ux(rng), uy(rng));
    const Ray ray = cam.underwater_ray(px);
    const Vec3 x = ray.at(ur(rng));
    const auto c = cam.project(x);
    if (!c) continue;
    Vec2 seen = c->pixel;
    if (pixel_sigma > 0.0) {
      const double du = noise(rng);
      const double dv = noise(rng);
      seen += pixel_sigma * Vec2(du, dv);
    }
    obs.target_points.push_back(x);
    obs.observed_pixels.push_back(seen);
  }
  return obs;
}

// --------------------------------------------------------------------------
// Files: observations {"camera_id": ..., "observations": [{X, Y, Z, u, v}]};
// result is a rig patch (see apply_interface_patch) plus a calibration block.

inline nlohmann::json observations_json(const CalibObservation& obs) {
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < obs.target_points.size(); ++i) {
    const auto& x = obs.target_points[i];
    const auto& p = obs.observed_pixels[i];
    list.push_back({{"X", x.x()}, {"Y", x.y()}, {"Z", x.z()}, {"u", p.x()}, {"v", p.y()}});
  }
  return {{"camera_id", obs.camera_id}, {"observations", list}};
}

inline CalibObservation observations_from_json(const nlohmann::json& j) {
  try {
    CalibObservation obs;
    obs.camera_id = j.at("camera_id").get<std::string>();
    for (const auto& o : j.at("observations")) {
      obs.target_points.emplace_back(o.at("X").get<double>(), o.at("Y").get<double>(), o.at("Z").get<double>());
      obs.observed_pixels.emplace_back(o.at("u").get<double>(), o.at("v").get<double>());
    }
    return obs;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("observations: ") + e.what());
  }
}

inline CalibObservation load_observations(const std::filesystem::path& path) {
  try {
    return observations_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("observations " + path.string() + ": " + e.what());
  }
}

inline nlohmann::json estimate_patch_json(const std::string& camera_id, const InterfaceEstimate& est, double eta) {
  RefractiveInterface iface{est.normal, est.distance, eta};
  return {{"version", kRigVersion},
          {"devices", {{{"id", camera_id}, {"interface", interface_json(iface)}}}},
          {"calibration",
           {{"rms_residual", est.rms_residual}, {"iterations", est.iterations}, {"converged", est.converged}}}};
}

}  // namespace uw3d
