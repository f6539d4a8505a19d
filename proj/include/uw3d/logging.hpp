#pragma once

// Line-delimited JSON event log. Events go to stderr unless a sink is
// installed (tests capture or silence them).

#include <chrono>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>

#include <json.hpp>

namespace uw3d {

class EventLog {
 public:
  using Sink = std::function<void(const std::string&)>;

  static EventLog& instance() {
    static EventLog log;
    return log;
  }

  void set_sink(Sink sink) {
    std::lock_guard lock(mu_);
    sink_ = std::move(sink);
  }

  void silence() { set_sink([](const std::string&) {}); }
  void reset() { set_sink(nullptr); }

  void emit(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
    fields["event"] = event;
    fields["ts_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
    const std::string line = fields.dump();
    std::lock_guard lock(mu_);
    if (sink_)
      sink_(line);
    else
      std::cerr << line << '\n';
  }

 private:
  std::mutex mu_;
  Sink sink_;
};

inline void log_event(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
  EventLog::instance().emit(event, std::move(fields));
}

}  // namespace uw3d
