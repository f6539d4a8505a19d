#pragma once

// Capture scheduling: on demand, fixed interval, or once a day.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <variant>

#include "uw3d/error.hpp"

namespace uw3d::control {

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::int64_t kMinInterval = 60;

struct Schedule {
  enum class Mode { on_demand, interval, daily };

  Mode mode = Mode::on_demand;
  std::int64_t interval_seconds = 3600;
  std::int64_t time_of_day = 0;  // seconds after UTC midnight, daily mode
  bool enabled = true;

  void validate() const {
    if (mode == Mode::interval && interval_seconds < kMinInterval)
      throw InvalidArgument("schedule: interval must be at least 60 s");
    if (mode == Mode::daily && (time_of_day < 0 || time_of_day >= kSecondsPerDay))
      throw InvalidArgument("schedule: time of day out of range");
  }

  // "on_demand", "interval:<seconds>", or "daily:HH:MM".
  static Schedule parse(const std::string& text) {
    Schedule s;
    if (text == "on_demand") {
      s.mode = Mode::on_demand;
    } else if (text.starts_with("interval:")) {
      s.mode = Mode::interval;
      try {
        std::size_t used = 0;
        s.interval_seconds = std::stoll(text.substr(9), &used);
        if (used != text.size() - 9) throw InvalidArgument("trailing characters");
      } catch (const std::exception&) {
        throw InvalidArgument("schedule: bad interval in '" + text + "'");
      }
    } else if (text.starts_with("daily:")) {
      s.mode = Mode::daily;
      int hh = -1, mm = -1;
      char tail = 0;
      if (std::sscanf(text.c_str() + 6, "%d:%d%c", &hh, &mm, &tail) != 2 || hh < 0 || hh > 23 || mm < 0 || mm > 59)
        throw InvalidArgument("schedule: bad time of day in '" + text + "'");
      s.time_of_day = hh * 3600 + mm * 60;
    } else {
      throw InvalidArgument("schedule: expected on_demand, interval:<s> or daily:HH:MM, got '" + text + "'");
    }
    s.validate();
    return s;
  }
};

struct Trigger {
  friend bool operator==(const Trigger&, const Trigger&) = default;
};
struct Wait {
  std::optional<std::int64_t> seconds;  // nullopt: nothing scheduled
  friend bool operator==(const Wait&, const Wait&) = default;
};
using TickDecision = std::variant<Trigger, Wait>;

// Pure decision for one scheduler tick. Times are seconds on a monotone
// UTC-aligned clock; last_run is the start of the previous session.
inline TickDecision scheduler_tick(std::int64_t now, const Schedule& schedule, std::optional<std::int64_t> last_run) {
  schedule.validate();
  if (!schedule.enabled || schedule.mode == Schedule::Mode::on_demand) return Wait{};
  if (schedule.mode == Schedule::Mode::interval) {
    if (!last_run) return Trigger{};
    const std::int64_t elapsed = now - *last_run;
    if (elapsed >= schedule.interval_seconds) return Trigger{};
    return Wait{schedule.interval_seconds - elapsed};
  }
  const std::int64_t day_start = (now >= 0 ? now / kSecondsPerDay : (now - kSecondsPerDay + 1) / kSecondsPerDay) *
                                 kSecondsPerDay;
  const std::int64_t target = day_start + schedule.time_of_day;
  if (now < target) return Wait{target - now};
  if (!last_run || *last_run < target) return Trigger{};
  return Wait{target + kSecondsPerDay - now};
}

}  // namespace uw3d::control
