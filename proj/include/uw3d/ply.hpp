#pragma once

// ASCII PLY export of point clouds (x y z gap as float).

#include <array>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "uw3d/error.hpp"
#include "uw3d/image.hpp"
#include "uw3d/reconstruct.hpp"

namespace uw3d {

// Nine significant digits round-trip any float exactly.
inline std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

inline std::string encode_ply(const PointCloud& cloud) {
  std::string out;
  out.reserve(64 * cloud.size() + 256);
  out += "ply\nformat ascii 1.0\n";
  out += "comment source " + (cloud.source_device.empty() ? std::string("-") : cloud.source_device) + "\n";
  out += "comment match " + (cloud.match_device.empty() ? std::string("-") : cloud.match_device) + "\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\nproperty float gap\nend_header\n";
  for (const auto& p : cloud.points) {
    out += format_float(static_cast<float>(p.position.x()));
    out += ' ';
    out += format_float(static_cast<float>(p.position.y()));
    out += ' ';
    out += format_float(static_cast<float>(p.position.z()));
    out += ' ';
    out += format_float(static_cast<float>(p.gap));
    out += '\n';
  }
  return out;
}

inline void export_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  write_file(path, encode_ply(cloud));
}

using PlyVertex = std::array<float, 4>;  // x y z gap

// Reads back the files written by export_ply.
inline std::vector<PlyVertex> parse_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw IoError("PLY: missing magic");
  if (!std::getline(in, line) || line != "format ascii 1.0") throw IoError("PLY: only ascii 1.0 is supported");
  long count = -1;
  int properties = 0;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex" || !ls) throw IoError("PLY: unexpected element '" + line + "'");
    } else if (word == "property") {
      ++properties;
    } else if (word != "comment") {
      throw IoError("PLY: unexpected header line '" + line + "'");
    }
  }
  if (count < 0 || properties != 4) throw IoError("PLY: malformed header");
  std::vector<PlyVertex> out(static_cast<std::size_t>(count));
  for (auto& v : out) {
    for (auto& c : v) {
      std::string tok;
      if (!(in >> tok)) throw IoError("PLY: truncated vertex data");
      c = std::stof(tok);
    }
  }
  return out;
}

inline std::vector<PlyVertex> read_ply(const std::filesystem::path& path) { return parse_ply(read_file(path)); }

}  // namespace uw3d
