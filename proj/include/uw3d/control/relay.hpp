#pragma once

// Sixteen-port power relay board: port naming and state encoding.

#include <array>
#include <bitset>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "uw3d/error.hpp"

namespace uw3d::control {

inline constexpr int kRelayPorts = 16;

// Fixed assignment: eight cameras, three projectors, both controller PCs,
// the two 8-port switches, one spare.
inline const std::array<std::string, kRelayPorts>& relay_port_names() {
  static const std::array<std::string, kRelayPorts> names = {
      "cam0", "cam1", "cam2", "cam3", "cam4", "cam5", "cam6", "cam7",
      "proj0", "proj1", "proj2", "pc0", "pc1", "sw0", "sw1", "spare"};
  return names;
}

// Accepts a port name or a decimal index 0..15.
inline std::optional<int> resolve_relay_port(std::string_view port) {
  const auto& names = relay_port_names();
  for (int i = 0; i < kRelayPorts; ++i)
    if (names[static_cast<std::size_t>(i)] == port) return i;
  int idx = -1;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), idx);
  if (ec == std::errc() && ptr == port.data() + port.size() && idx >= 0 && idx < kRelayPorts) return idx;
  return std::nullopt;
}

inline bool is_projector_port(int index) { return index >= 8 && index <= 10; }

class RelayState {
 public:
  // Returns the full state after the change; idempotent.
  std::uint16_t set(int index, bool on) {
    check(index);
    bits_.set(static_cast<std::size_t>(index), on);
    return bits();
  }
  std::uint16_t set(std::string_view port, bool on) {
    const auto idx = resolve_relay_port(port);
    if (!idx) throw InvalidArgument("relay: unknown port '" + std::string(port) + "'");
    return set(*idx, on);
  }

  bool get(int index) const {
    check(index);
    return bits_.test(static_cast<std::size_t>(index));
  }

  std::uint16_t bits() const { return static_cast<std::uint16_t>(bits_.to_ulong()); }

  friend bool operator==(const RelayState&, const RelayState&) = default;

 private:
  static void check(int index) {
    if (index < 0 || index >= kRelayPorts) throw InvalidArgument("relay: unknown port index " + std::to_string(index));
  }
  std::bitset<kRelayPorts> bits_;
};

// Four uppercase hex digits, bit i = port i.
inline std::string format_relay_bits(std::uint16_t bits) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(bits));
  return buf;
}

inline std::optional<std::uint16_t> parse_relay_bits(std::string_view hex) {
  if (hex.size() != 4) return std::nullopt;
  unsigned v = 0;
  const auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), v, 16);
  if (ec != std::errc() || ptr != hex.data() + hex.size()) return std::nullopt;
  return static_cast<std::uint16_t>(v);
}

}  // namespace uw3d::control
