#pragma once

// Rig configuration: every camera and projector with intrinsics, pose, and
// its flat-port parameters. Serialized as versioned JSON.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "uw3d/error.hpp"
#include "uw3d/image.hpp"
#include "uw3d/optics.hpp"

namespace uw3d {

inline constexpr int kRigVersion = 1;

enum class DeviceRole { camera, projector };

struct Device {
  std::string id;
  DeviceRole role = DeviceRole::camera;
  int width = 0;
  int height = 0;
  Intrinsics intrinsics;
  Pose pose;
  RefractiveInterface interface;

  Ray underwater_ray(const Vec2& pixel) const { return refractive_ray(pixel, intrinsics, pose, interface); }
  std::optional<InterfaceCrossing> project(const Vec3& world) const {
    return try_refractive_project(world, intrinsics, pose, interface);
  }

  void validate() const {
    if (id.empty()) throw InvalidArgument("device: empty id");
    if (width <= 0 || height <= 0) throw InvalidArgument("device " + id + ": resolution must be positive");
    intrinsics.validate();
    pose.validate();
    interface.validate();
  }
};

struct RigConfig {
  int version = kRigVersion;
  std::vector<Device> devices;

  const Device* find(const std::string& id) const {
    for (const auto& d : devices)
      if (d.id == id) return &d;
    return nullptr;
  }
  Device* find(const std::string& id) {
    for (auto& d : devices)
      if (d.id == id) return &d;
    return nullptr;
  }

  const Device& get(const std::string& id, DeviceRole role) const {
    const Device* d = find(id);
    if (!d) throw InvalidArgument("rig: unknown device '" + id + "'");
    if (d->role != role)
      throw InvalidArgument("rig: device '" + id + "' is not a " +
                            (role == DeviceRole::camera ? "camera" : "projector"));
    return *d;
  }

  std::vector<const Device*> with_role(DeviceRole role) const {
    std::vector<const Device*> out;
    for (const auto& d : devices)
      if (d.role == role) out.push_back(&d);
    return out;
  }
  std::vector<const Device*> cameras() const { return with_role(DeviceRole::camera); }
  std::vector<const Device*> projectors() const { return with_role(DeviceRole::projector); }

  void validate() const {
    if (version != kRigVersion) throw InvalidArgument("rig: unsupported version " + std::to_string(version));
    for (std::size_t i = 0; i < devices.size(); ++i) {
      devices[i].validate();
      for (std::size_t j = 0; j < i; ++j)
        if (devices[j].id == devices[i].id) throw InvalidArgument("rig: duplicate device id '" + devices[i].id + "'");
    }
  }
};

// Applies X -> rotation * X + translation to every device.
inline RigConfig transform_rig(RigConfig rig, const Mat3& rotation, const Vec3& translation) {
  for (auto& d : rig.devices) {
    d.pose.rotation = rotation * d.pose.rotation;
    d.pose.translation = rotation * d.pose.translation + translation;
  }
  return rig;
}

// --------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 json_vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

inline nlohmann::json interface_json(const RefractiveInterface& i) {
  return {{"normal", detail::vec_json(i.normal)}, {"distance", i.distance}, {"eta", i.eta}};
}

inline RefractiveInterface interface_from_json(const nlohmann::json& j) {
  RefractiveInterface i;
  i.normal = detail::json_vec3(j.at("normal"));
  i.distance = j.at("distance").get<double>();
  i.eta = j.value("eta", kDefaultEta);
  return i;
}

inline nlohmann::json device_json(const Device& d) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(d.pose.rotation(r, c));
  return {{"id", d.id},
          {"role", d.role == DeviceRole::camera ? "camera" : "projector"},
          {"resolution", {d.width, d.height}},
          {"intrinsics",
           {{"fx", d.intrinsics.fx},
            {"fy", d.intrinsics.fy},
            {"cx", d.intrinsics.cx},
            {"cy", d.intrinsics.cy},
            {"skew", d.intrinsics.skew}}},
          {"pose", {{"rotation", rot}, {"translation", detail::vec_json(d.pose.translation)}}},
          {"interface", interface_json(d.interface)}};
}

inline Device device_from_json(const nlohmann::json& j) {
  Device d;
  d.id = j.at("id").get<std::string>();
  const auto role = j.at("role").get<std::string>();
  if (role == "camera")
    d.role = DeviceRole::camera;
  else if (role == "projector")
    d.role = DeviceRole::projector;
  else
    throw InvalidArgument("device " + d.id + ": unknown role '" + role + "'");
  const auto& res = j.at("resolution");
  d.width = res.at(0).get<int>();
  d.height = res.at(1).get<int>();
  const auto& k = j.at("intrinsics");
  d.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                  k.at("cy").get<double>(), k.value("skew", 0.0)};
  const auto& rot = j.at("pose").at("rotation");
  if (!rot.is_array() || rot.size() != 9) throw InvalidArgument("device " + d.id + ": rotation needs 9 numbers");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) d.pose.rotation(r, c) = rot[static_cast<std::size_t>(3 * r + c)].get<double>();
  d.pose.translation = detail::json_vec3(j.at("pose").at("translation"));
  d.interface = interface_from_json(j.at("interface"));
  return d;
}

inline nlohmann::json rig_json(const RigConfig& rig) {
  nlohmann::json devices = nlohmann::json::array();
  for (const auto& d : rig.devices) devices.push_back(device_json(d));
  return {{"version", rig.version}, {"devices", devices}};
}

inline RigConfig rig_from_json(const nlohmann::json& j) {
  RigConfig rig;
  try {
    if (!j.contains("version")) throw InvalidArgument("rig: missing mandatory 'version' field");
    rig.version = j.at("version").get<int>();
    for (const auto& d : j.at("devices")) rig.devices.push_back(device_from_json(d));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("rig: ") + e.what());
  }
  rig.validate();
  return rig;
}

inline RigConfig load_rig(const std::filesystem::path& path) {
  try {
    return rig_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("rig " + path.string() + ": " + e.what());
  }
}

inline void save_rig(const std::filesystem::path& path, const RigConfig& rig) {
  write_file(path, rig_json(rig).dump(2) + "\n");
}

// Patch: {"version": 1, "devices": [{"id": ..., "interface": {...}}, ...]}.
// Only the interface block of listed devices is replaced.
inline void apply_interface_patch(RigConfig& rig, const nlohmann::json& patch) {
  if (patch.value("version", 0) != kRigVersion) throw InvalidArgument("patch: unsupported or missing version");
  for (const auto& entry : patch.at("devices")) {
    Device* d = rig.find(entry.at("id").get<std::string>());
    if (!d) throw InvalidArgument("patch: unknown device '" + entry.at("id").get<std::string>() + "'");
    d->interface = interface_from_json(entry.at("interface"));
    d->interface.validate();
  }
}

// --------------------------------------------------------------------------
// Ring layout: cameras and projectors spaced on a horizontal circle, all
// aimed at a common point. World z is up.

struct RingRigOptions {
  int cameras = 8;
  int projectors = 3;
  double radius = 0.866;   // horizontal distance to the aim point, meters
  double height = 0.5;     // above the aim point
  Vec3 aim = Vec3::Zero();
  int camera_width = 1280;
  int camera_height = 1024;
  double camera_focal = 1800.0;
  int projector_width = 1024;
  int projector_height = 768;
  double projector_focal = 1400.0;
  RefractiveInterface interface{};
  double projector_offset_deg = 22.5;
};

inline RigConfig make_ring_rig(const RingRigOptions& o = {}) {
  RigConfig rig;
  auto place = [&](const std::string& id, DeviceRole role, double azimuth_deg, int w, int h, double f) {
    const double a = azimuth_deg * std::numbers::pi / 180.0;
    const Vec3 eye = o.aim + Vec3(o.radius * std::cos(a), o.radius * std::sin(a), o.height);
    Device d;
    d.id = id;
    d.role = role;
    d.width = w;
    d.height = h;
    d.intrinsics = {f, f, 0.5 * (w - 1), 0.5 * (h - 1), 0.0};
    d.pose = Pose::look_at(eye, o.aim, Vec3::UnitZ());
    d.interface = o.interface;
    rig.devices.push_back(d);
  };
  for (int i = 0; i < o.cameras; ++i)
    place("cam" + std::to_string(i), DeviceRole::camera, 360.0 * i / std::max(1, o.cameras), o.camera_width,
          o.camera_height, o.camera_focal);
  for (int i = 0; i < o.projectors; ++i)
    place("proj" + std::to_string(i), DeviceRole::projector,
          o.projector_offset_deg + 360.0 * i / std::max(1, o.projectors), o.projector_width, o.projector_height,
          o.projector_focal);
  return rig;
}

}  // namespace uw3d
