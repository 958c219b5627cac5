#include "xbo/session_log.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <istream>
#include <ostream>

#include "xbo/errors.hpp"

namespace xbo {

nlohmann::ordered_json event_to_json(const Event& e) {
  nlohmann::ordered_json j;
  j["ts"] = e.ts;
  j["session_id"] = e.session_id;
  j["event"] = e.event;
  j["payload"] = e.payload;
  return j;
}

Event event_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw LoadError("event must be a JSON object");
  Event e;
  for (const char* key : {"ts", "session_id", "event"}) {
    if (!j.contains(key) || !j[key].is_string()) throw LoadError(std::string("event field '") + key + "' missing");
  }
  e.ts = j["ts"].get<std::string>();
  e.session_id = j["session_id"].get<std::string>();
  e.event = j["event"].get<std::string>();
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw LoadError("event payload must be an object");
    e.payload = j["payload"];
  }
  return e;
}

void write_event(std::ostream& out, const Event& e) { out << event_to_json(e).dump() << '\n'; }

std::vector<Event> read_events(std::istream& in) {
  std::vector<Event> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const bool last_without_newline = in.eof();
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const std::exception& e) {
      if (last_without_newline) break;
      throw LoadError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Event> read_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open session log " + path.string());
  try {
    return read_events(in);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void append_events(const std::filesystem::path& path, const std::vector<Event>& events) {
  if (events.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("cannot write session log " + path.string());
  for (const auto& e : events) {
    write_event(out, e);
    out.flush();
  }
  if (!out) throw ConfigError("failed writing session log " + path.string());
}

std::filesystem::path session_log_path(const std::filesystem::path& dir, const std::string& session_id) {
  return dir / (session_id + ".jsonl");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

}  // namespace xbo
