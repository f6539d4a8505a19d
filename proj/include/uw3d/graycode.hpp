#pragma once

// Gray-code structured-light patterns: generation and decoding of captured
// stacks into per-camera-pixel projector coordinates.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uw3d/error.hpp"
#include "uw3d/image.hpp"

namespace uw3d {

constexpr std::uint64_t binary_to_gray(std::uint64_t b) noexcept { return b ^ (b >> 1); }

constexpr std::uint64_t gray_to_binary(std::uint64_t g) noexcept {
  for (unsigned shift = 1; shift < 64; shift <<= 1) g ^= g >> shift;
  return g;
}

// Number of bits needed to address `extent` distinct stripes.
constexpr int code_bits(int extent) noexcept {
  return extent <= 1 ? 0 : static_cast<int>(std::bit_width(static_cast<unsigned>(extent - 1)));
}

struct PatternSpec {
  int projector_width = 1024;
  int projector_height = 768;
  bool include_inverses = true;
  bool include_references = true;

  int col_bits() const { return code_bits(projector_width); }
  int row_bits() const { return code_bits(projector_height); }

  int pattern_count() const {
    return (col_bits() + row_bits()) * (include_inverses ? 2 : 1) + (include_references ? 2 : 0);
  }

  void validate() const {
    if (projector_width < 2 || projector_height < 2)
      throw InvalidArgument("pattern spec: projector width and height must be >= 2");
    if (projector_width > (1 << 24) || projector_height > (1 << 24))
      throw InvalidArgument("pattern spec: projector resolution out of range");
  }

  friend bool operator==(const PatternSpec&, const PatternSpec&) = default;
};

enum class PatternAxis { column, row, reference };

inline const char* to_string(PatternAxis a) {
  switch (a) {
    case PatternAxis::column: return "column";
    case PatternAxis::row: return "row";
    case PatternAxis::reference: return "reference";
  }
  return "?";
}

// One slot of the projected sequence. bit_plane counts from the MSB (0 = MSB).
// The black reference is the inverted white reference.
struct PatternDescriptor {
  int index = 0;
  PatternAxis axis = PatternAxis::reference;
  std::optional<int> bit_plane;
  bool inverted = false;

  friend bool operator==(const PatternDescriptor&, const PatternDescriptor&) = default;
};

// Ordered layout: white, black, then column planes MSB->LSB (each followed by
// its inverse), then row planes likewise. This order is the on-disk contract.
inline std::vector<PatternDescriptor> pattern_layout(const PatternSpec& spec) {
  spec.validate();
  std::vector<PatternDescriptor> out;
  out.reserve(static_cast<std::size_t>(spec.pattern_count()));
  int index = 0;
  if (spec.include_references) {
    out.push_back({index++, PatternAxis::reference, std::nullopt, false});
    out.push_back({index++, PatternAxis::reference, std::nullopt, true});
  }
  auto planes = [&](PatternAxis axis, int bits) {
    for (int k = 0; k < bits; ++k) {
      out.push_back({index++, axis, k, false});
      if (spec.include_inverses) out.push_back({index++, axis, k, true});
    }
  };
  planes(PatternAxis::column, spec.col_bits());
  planes(PatternAxis::row, spec.row_bits());
  return out;
}

// Whether projector pixel (x, y) is lit in the given pattern.
inline bool pattern_lit(const PatternSpec& spec, const PatternDescriptor& d, int x, int y) {
  bool lit = true;
  switch (d.axis) {
    case PatternAxis::reference: break;
    case PatternAxis::column: {
      const int shift = spec.col_bits() - 1 - *d.bit_plane;
      lit = ((binary_to_gray(static_cast<std::uint64_t>(x)) >> shift) & 1U) != 0;
      break;
    }
    case PatternAxis::row: {
      const int shift = spec.row_bits() - 1 - *d.bit_plane;
      lit = ((binary_to_gray(static_cast<std::uint64_t>(y)) >> shift) & 1U) != 0;
      break;
    }
  }
  return lit != d.inverted;
}

struct PatternImage {
  PatternDescriptor descriptor;
  Image8 pixels;  // 0 or 255
};

struct PatternSequence {
  PatternSpec spec;
  std::vector<PatternImage> patterns;
};

inline PatternSequence generate_patterns(const PatternSpec& spec) {
  PatternSequence seq{spec, {}};
  for (const auto& d : pattern_layout(spec)) {
    Image8 img(spec.projector_width, spec.projector_height);
    // Column patterns depend only on x and row patterns only on y; build one
    // line and replicate.
    std::vector<std::uint8_t> line_x(static_cast<std::size_t>(spec.projector_width));
    for (int x = 0; x < spec.projector_width; ++x) line_x[x] = pattern_lit(spec, d, x, 0) ? 255 : 0;
    for (int y = 0; y < spec.projector_height; ++y) {
      const std::uint8_t row_value = pattern_lit(spec, d, 0, y) ? 255 : 0;
      auto* dst = img.pixels.data() + static_cast<std::size_t>(y) * spec.projector_width;
      if (d.axis == PatternAxis::row)
        std::fill_n(dst, spec.projector_width, row_value);
      else
        std::copy(line_x.begin(), line_x.end(), dst);
    }
    seq.patterns.push_back({d, std::move(img)});
  }
  return seq;
}

// --------------------------------------------------------------------------
// Decoding

inline constexpr double kUndecoded = -1.0;
inline constexpr double kDefaultContrastThreshold = 0.05;

struct DecodedPixel {
  double proj_x = kUndecoded;
  double proj_y = kUndecoded;
  double confidence = 0.0;

  // Continuous coordinates cover [-0.5, size - 0.5) with pixel centers on integers.
  bool decoded() const { return proj_x >= -0.5 && proj_y >= -0.5; }
};

struct CorrespondenceMap {
  std::string camera_id;
  int width = 0;
  int height = 0;
  std::vector<DecodedPixel> pixels;  // row-major

  CorrespondenceMap() = default;
  CorrespondenceMap(std::string id, int w, int h)
      : camera_id(std::move(id)), width(w), height(h), pixels(static_cast<std::size_t>(w) * h) {}

  DecodedPixel& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const DecodedPixel& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  std::size_t decoded_count() const {
    return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(),
                                                  [](const DecodedPixel& p) { return p.decoded(); }));
  }
};

// Decodes a captured stack ordered as pattern_layout(spec).
//
// A bit is 1 when the pattern pixel is brighter than its inverse. Bit
// confidence is |I_p - I_inv| / (I_white - I_black), clamped to [0, 1]; the
// pixel confidence is the minimum over all bits. Pixels below
// `contrast_threshold`, with zero contrast, whose own white-black contrast is
// below `contrast_threshold` of the stack's dynamic range (the largest
// white-black difference), or whose code falls outside the projector are left
// undecoded.
//
// Without inverses each plane is compared against the white/black midpoint;
// without references the dynamic range is taken as the full 8-bit span.
inline CorrespondenceMap decode_stack(std::span<const Image8> images, const PatternSpec& spec,
                                      double contrast_threshold = kDefaultContrastThreshold,
                                      std::string camera_id = {}) {
  const auto layout = pattern_layout(spec);
  if (images.size() != layout.size())
    throw InvalidArgument("decode_stack: expected " + std::to_string(layout.size()) + " images, got " +
                          std::to_string(images.size()));
  if (images.empty()) throw InvalidArgument("decode_stack: empty stack");
  for (const auto& img : images)
    if (!img.same_shape(images.front())) throw InvalidArgument("decode_stack: image dimensions differ");
  if (!spec.include_inverses && !spec.include_references)
    throw InvalidArgument("decode_stack: need inverse patterns or white/black references");

  const int width = images.front().width;
  const int height = images.front().height;
  CorrespondenceMap map(std::move(camera_id), width, height);

  // Index of the direct and inverse image for each plane of each axis.
  struct Plane {
    std::size_t direct;
    std::optional<std::size_t> inverse;
  };
  std::vector<Plane> col_planes(static_cast<std::size_t>(spec.col_bits()));
  std::vector<Plane> row_planes(static_cast<std::size_t>(spec.row_bits()));
  std::optional<std::size_t> white, black;
  for (const auto& d : layout) {
    const auto idx = static_cast<std::size_t>(d.index);
    if (d.axis == PatternAxis::reference) {
      (d.inverted ? black : white) = idx;
      continue;
    }
    auto& planes = d.axis == PatternAxis::column ? col_planes : row_planes;
    auto& plane = planes[static_cast<std::size_t>(*d.bit_plane)];
    if (d.inverted)
      plane.inverse = idx;
    else
      plane.direct = idx;
  }

  const std::size_t n = static_cast<std::size_t>(width) * height;
  double dynamic_range = 255.0;
  if (white && black) {
    int widest = 0;
    for (std::size_t i = 0; i < n; ++i)
      widest = std::max(widest, int{images[*white].pixels[i]} - int{images[*black].pixels[i]});
    dynamic_range = widest;
  } else if (white) {
    dynamic_range = *std::max_element(images[*white].pixels.begin(), images[*white].pixels.end());
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double w = white ? images[*white].pixels[i] : 255.0;
    const double b = black ? images[*black].pixels[i] : 0.0;
    const double range = w - b;
    if (range <= 0.0) continue;

    double confidence = 1.0;
    auto decode_axis = [&](const std::vector<Plane>& planes) {
      std::uint64_t gray = 0;
      for (const auto& p : planes) {
        const double ip = images[p.direct].pixels[i];
        const double reference = p.inverse ? images[*p.inverse].pixels[i] : 0.5 * (w + b);
        const double scale = p.inverse ? 1.0 : 2.0;
        const double c = std::clamp(scale * std::abs(ip - reference) / range, 0.0, 1.0);
        confidence = std::min(confidence, c);
        gray = (gray << 1) | (ip > reference ? 1U : 0U);
      }
      return gray_to_binary(gray);
    };
    const std::uint64_t x = decode_axis(col_planes);
    const std::uint64_t y = decode_axis(row_planes);

    auto& out = map.pixels[i];
    out.confidence = confidence;
    if (confidence <= 0.0 || confidence < contrast_threshold) continue;
    if (range < contrast_threshold * dynamic_range) continue;
    if (x >= static_cast<std::uint64_t>(spec.projector_width) ||
        y >= static_cast<std::uint64_t>(spec.projector_height))
      continue;
    out.proj_x = static_cast<double>(x);
    out.proj_y = static_cast<double>(y);
  }
  return map;
}

inline CorrespondenceMap decode_stack(const std::vector<Image8>& images, const PatternSpec& spec,
                                      double contrast_threshold = kDefaultContrastThreshold,
                                      std::string camera_id = {}) {
  return decode_stack(std::span<const Image8>(images), spec, contrast_threshold, std::move(camera_id));
}

}  // namespace uw3d
