#pragma once

// On-disk form of pattern sequences and captured stacks: one PGM per slot
// plus a JSON manifest that records the order.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "uw3d/graycode.hpp"
#include "uw3d/image.hpp"

namespace uw3d {

inline constexpr int kManifestVersion = 1;

// pat_<index:03>_<axis><bit|ref>[_inv].pgm, e.g. pat_000_ref.pgm (white),
// pat_001_ref_inv.pgm (black), pat_002_col0.pgm, pat_003_col0_inv.pgm.
inline std::string pattern_filename(const PatternDescriptor& d) {
  char buf[64];
  const char* inv = d.inverted ? "_inv" : "";
  switch (d.axis) {
    case PatternAxis::reference:
      std::snprintf(buf, sizeof buf, "pat_%03d_ref%s.pgm", d.index, inv);
      break;
    case PatternAxis::column:
      std::snprintf(buf, sizeof buf, "pat_%03d_col%d%s.pgm", d.index, *d.bit_plane, inv);
      break;
    case PatternAxis::row:
      std::snprintf(buf, sizeof buf, "pat_%03d_row%d%s.pgm", d.index, *d.bit_plane, inv);
      break;
  }
  return buf;
}

inline nlohmann::json manifest_json(const PatternSpec& spec) {
  nlohmann::json patterns = nlohmann::json::array();
  for (const auto& d : pattern_layout(spec)) {
    patterns.push_back({{"index", d.index},
                        {"axis", to_string(d.axis)},
                        {"bit_plane", d.bit_plane ? nlohmann::json(*d.bit_plane) : nlohmann::json(nullptr)},
                        {"inverted", d.inverted},
                        {"file", pattern_filename(d)}});
  }
  return {{"version", kManifestVersion},
          {"projector_width", spec.projector_width},
          {"projector_height", spec.projector_height},
          {"col_bits", spec.col_bits()},
          {"row_bits", spec.row_bits()},
          {"include_inverses", spec.include_inverses},
          {"include_references", spec.include_references},
          {"patterns", patterns}};
}

// Parses a manifest and checks that its listed order matches the layout the
// spec implies.
inline PatternSpec spec_from_manifest(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kManifestVersion) throw IoError("manifest: unsupported version");
    PatternSpec spec;
    spec.projector_width = j.at("projector_width").get<int>();
    spec.projector_height = j.at("projector_height").get<int>();
    spec.include_inverses = j.at("include_inverses").get<bool>();
    spec.include_references = j.at("include_references").get<bool>();
    spec.validate();
    const auto layout = pattern_layout(spec);
    const auto& listed = j.at("patterns");
    if (listed.size() != layout.size()) throw IoError("manifest: pattern count does not match spec");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (listed[i].at("index").get<int>() != layout[i].index ||
          listed[i].at("axis").get<std::string>() != to_string(layout[i].axis) ||
          listed[i].at("inverted").get<bool>() != layout[i].inverted)
        throw IoError("manifest: pattern order does not match the gray-code layout");
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
}

inline void write_manifest(const std::filesystem::path& dir, const PatternSpec& spec) {
  write_file(dir / "manifest.json", manifest_json(spec).dump(2) + "\n");
}

inline PatternSpec read_manifest(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
  return spec_from_manifest(j);
}

inline void write_pattern_sequence(const std::filesystem::path& dir, const PatternSequence& seq) {
  std::filesystem::create_directories(dir);
  for (const auto& p : seq.patterns) write_pgm(dir / pattern_filename(p.descriptor), p.pixels);
  write_manifest(dir, seq.spec);
}

// Writes an image stack (e.g. one camera's captures) under the pattern names.
inline void write_stack(const std::filesystem::path& dir, const PatternSpec& spec, const std::vector<Image8>& stack) {
  const auto layout = pattern_layout(spec);
  if (layout.size() != stack.size()) throw InvalidArgument("write_stack: stack length does not match spec");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < stack.size(); ++i) write_pgm(dir / pattern_filename(layout[i]), stack[i]);
  write_manifest(dir, spec);
}

struct LoadedStack {
  PatternSpec spec;
  std::vector<Image8> images;
};

inline LoadedStack read_stack(const std::filesystem::path& dir) {
  LoadedStack out{read_manifest(dir), {}};
  for (const auto& d : pattern_layout(out.spec)) out.images.push_back(read_pgm(dir / pattern_filename(d)));
  return out;
}

}  // namespace uw3d
