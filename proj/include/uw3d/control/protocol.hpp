#pragma once

// Newline-terminated ASCII device protocol.
//
//   HELLO <device-type> <id>        -> OK <firmware>
//   SET <port> ON|OFF               -> OK <16-bit-hex-state>    (relay)
//   GET                             -> OK <16-bit-hex-state>    (relay)
//   SHOW <pattern-index>            -> OK                       (projector)
//   BLANK                           -> OK                       (projector)
//   CAPTURE <session-id> <index>    -> OK <nbytes> + raw PGM    (camera)
//   BEAT <role> <seq>               -> OK                       (controller)
//   anything malformed              -> ERR <reason>

#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace uw3d::control {

struct HelloCmd {
  std::string device_type;
  std::string id;
};
struct SetCmd {
  std::string port;
  bool on = false;
};
struct GetCmd {};
struct ShowCmd {
  int pattern = 0;
};
struct BlankCmd {};
struct CaptureCmd {
  std::string session;
  int pattern = 0;
};
struct BeatCmd {
  std::string role;
  std::uint64_t seq = 0;
};

using Command = std::variant<HelloCmd, SetCmd, GetCmd, ShowCmd, BlankCmd, CaptureCmd, BeatCmd>;

struct ParseFailure {
  std::string reason;
};

using ParseResult = std::variant<Command, ParseFailure>;

inline std::vector<std::string_view> split_tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

namespace detail {

template <class T>
std::optional<T> parse_uint(std::string_view s) {
  T v{};
  if (s.empty() || s.front() < '0' || s.front() > '9') return std::nullopt;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_token(std::string_view s) {
  if (s.empty() || s.size() > 64) return false;
  for (char c : s)
    if (!(c == '-' || c == '_' || c == '.' || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
          (c >= 'A' && c <= 'Z')))
      return false;
  return true;
}

}  // namespace detail

inline ParseResult parse_command(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto tok = split_tokens(line);
  if (tok.empty()) return ParseFailure{"empty-command"};
  const auto verb = tok[0];
  auto argc_is = [&](std::size_t n) { return tok.size() == n + 1; };

  if (verb == "HELLO") {
    if (!argc_is(2) || !detail::is_token(tok[1]) || !detail::is_token(tok[2])) return ParseFailure{"usage HELLO <device-type> <id>"};
    return Command{HelloCmd{std::string(tok[1]), std::string(tok[2])}};
  }
  if (verb == "SET") {
    if (!argc_is(2) || !detail::is_token(tok[1])) return ParseFailure{"usage SET <port> ON|OFF"};
    if (tok[2] != "ON" && tok[2] != "OFF") return ParseFailure{"usage SET <port> ON|OFF"};
    return Command{SetCmd{std::string(tok[1]), tok[2] == "ON"}};
  }
  if (verb == "GET") {
    if (!argc_is(0)) return ParseFailure{"usage GET"};
    return Command{GetCmd{}};
  }
  if (verb == "SHOW") {
    const auto idx = argc_is(1) ? detail::parse_uint<int>(tok[1]) : std::nullopt;
    if (!idx) return ParseFailure{"usage SHOW <pattern-index>"};
    return Command{ShowCmd{*idx}};
  }
  if (verb == "BLANK") {
    if (!argc_is(0)) return ParseFailure{"usage BLANK"};
    return Command{BlankCmd{}};
  }
  if (verb == "CAPTURE") {
    const auto idx = argc_is(2) ? detail::parse_uint<int>(tok[2]) : std::nullopt;
    if (!idx || !detail::is_token(tok[1])) return ParseFailure{"usage CAPTURE <session-id> <pattern-index>"};
    return Command{CaptureCmd{std::string(tok[1]), *idx}};
  }
  if (verb == "BEAT") {
    const auto seq = argc_is(2) ? detail::parse_uint<std::uint64_t>(tok[2]) : std::nullopt;
    if (!seq || (tok[1] != "primary" && tok[1] != "backup")) return ParseFailure{"usage BEAT primary|backup <seq>"};
    return Command{BeatCmd{std::string(tok[1]), *seq}};
  }
  return ParseFailure{"unknown-command"};
}

inline std::string format_command(const Command& c) {
  struct V {
    std::string operator()(const HelloCmd& h) const { return "HELLO " + h.device_type + " " + h.id; }
    std::string operator()(const SetCmd& s) const { return "SET " + s.port + (s.on ? " ON" : " OFF"); }
    std::string operator()(const GetCmd&) const { return "GET"; }
    std::string operator()(const ShowCmd& s) const { return "SHOW " + std::to_string(s.pattern); }
    std::string operator()(const BlankCmd&) const { return "BLANK"; }
    std::string operator()(const CaptureCmd& c) const {
      return "CAPTURE " + c.session + " " + std::to_string(c.pattern);
    }
    std::string operator()(const BeatCmd& b) const { return "BEAT " + b.role + " " + std::to_string(b.seq); }
  };
  return std::visit(V{}, c);
}

// Reply line split into status and argument ("OK 00FF" -> ok, "00FF").
struct Reply {
  bool ok = false;
  std::string argument;
};

inline std::optional<Reply> parse_reply(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line == "OK") return Reply{true, {}};
  if (line.starts_with("OK ")) return Reply{true, std::string(line.substr(3))};
  if (line == "ERR") return Reply{false, {}};
  if (line.starts_with("ERR ")) return Reply{false, std::string(line.substr(4))};
  return std::nullopt;
}

}  // namespace uw3d::control
