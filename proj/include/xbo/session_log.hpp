#pragma once

// Append-only JSON-lines event log, one file per session.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace xbo {

namespace event_type {
inline constexpr const char* kSessionStarted = "session_started";
inline constexpr const char* kTrialSubmitted = "trial_submitted";
inline constexpr const char* kFeedbackIssued = "feedback_issued";
inline constexpr const char* kExplanationServed = "explanation_served";
inline constexpr const char* kEggCompleted = "egg_completed";
inline constexpr const char* kDifficultyRecorded = "difficulty_recorded";
inline constexpr const char* kSessionCompleted = "session_completed";
}  // namespace event_type

struct Event {
  std::string ts;  // ISO-8601 UTC
  std::string session_id;
  std::string event;
  nlohmann::ordered_json payload = nlohmann::ordered_json::object();

  bool operator==(const Event&) const = default;
};

nlohmann::ordered_json event_to_json(const Event& e);
Event event_from_json(const nlohmann::ordered_json& j);  // throws LoadError

void write_event(std::ostream& out, const Event& e);

/// Reads a log. A final line without a newline that does not parse is treated as
/// a torn write and dropped; any other bad line is a LoadError naming its number.
std::vector<Event> read_events(std::istream& in);
std::vector<Event> read_events(const std::filesystem::path& path);

/// Appends events to `path`, flushing after each one.
void append_events(const std::filesystem::path& path, const std::vector<Event>& events);

std::filesystem::path session_log_path(const std::filesystem::path& dir, const std::string& session_id);

/// Current UTC time as "YYYY-MM-DDTHH:MM:SS.mmmZ".
std::string utc_timestamp();

}  // namespace xbo
