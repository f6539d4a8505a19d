#pragma once

// JSON form of a CorrespondenceMap: flat row-major arrays, -1 for undecoded.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "uw3d/error.hpp"
#include "uw3d/graycode.hpp"
#include "uw3d/image.hpp"

namespace uw3d {

inline nlohmann::json correspondence_json(const CorrespondenceMap& m) {
  nlohmann::json xs = nlohmann::json::array();
  nlohmann::json ys = nlohmann::json::array();
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& p : m.pixels) {
    const bool ok = p.decoded();
    xs.push_back(ok ? p.proj_x : kUndecoded);
    ys.push_back(ok ? p.proj_y : kUndecoded);
    cs.push_back(p.confidence);
  }
  return {{"version", 1},       {"camera_id", m.camera_id}, {"width", m.width}, {"height", m.height},
          {"proj_x", std::move(xs)}, {"proj_y", std::move(ys)}, {"confidence", std::move(cs)}};
}

inline CorrespondenceMap correspondence_from_json(const nlohmann::json& j) {
  try {
    CorrespondenceMap m(j.at("camera_id").get<std::string>(), j.at("width").get<int>(), j.at("height").get<int>());
    const auto& xs = j.at("proj_x");
    const auto& ys = j.at("proj_y");
    const auto& cs = j.at("confidence");
    if (m.width <= 0 || m.height <= 0) throw IoError("correspondence: invalid dimensions");
    if (xs.size() != m.pixels.size() || ys.size() != m.pixels.size() || cs.size() != m.pixels.size())
      throw IoError("correspondence: array length does not match dimensions");
    for (std::size_t i = 0; i < m.pixels.size(); ++i) {
      auto& p = m.pixels[i];
      p.proj_x = xs[i].get<double>();
      p.proj_y = ys[i].get<double>();
      p.confidence = cs[i].get<double>();
      if (!p.decoded()) p.proj_x = p.proj_y = kUndecoded;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("correspondence: ") + e.what());
  }
}

inline void save_correspondence(const std::filesystem::path& path, const CorrespondenceMap& m) {
  write_file(path, correspondence_json(m).dump() + "\n");
}

inline CorrespondenceMap load_correspondence(const std::filesystem::path& path) {
  try {
    return correspondence_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("correspondence " + path.string() + ": " + e.what());
  }
}

}  // namespace uw3d
