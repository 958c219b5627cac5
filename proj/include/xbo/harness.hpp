#pragma once

// Study harness: sessions of seven eggs (training, three baseline eggs without
// explanation, three treatment eggs with one), five trials per egg, metrics and
// scripted agents. Sessions are event-sourced: every state change is an Event in
// Session::history, and replaying the history rebuilds the session.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xbo/llm_client.hpp"
#include "xbo/render.hpp"
#include "xbo/scenario.hpp"
#include "xbo/session_log.hpp"

namespace xbo {

enum class Condition { Visual, Rules, Language };
enum class Block { Training, Baseline, Treatment };
enum class EggOutcome { Pending, Success, Failure };
enum class SessionStatus { InProgress, Completed };

std::string to_string(Condition c);
std::string to_string(Block b);
std::string to_string(EggOutcome o);
std::string to_string(SessionStatus s);
Condition condition_from_string(std::string_view s);  // throws ConfigError
ExplanationFormat format_for(Condition c);

inline constexpr std::size_t kMaxTrials = 5;
inline constexpr std::size_t kBlockSize = 3;

struct TrialRecord {
  std::string scenario_id;
  std::size_t index = 0;  // 1-based
  EggParameters submitted;
  double cook_time_s = 0.0;
  FeedbackGrade grade = FeedbackGrade::Undercooked;
  std::string ts;
  bool within_explanation_range = false;

  bool operator==(const TrialRecord&) const = default;
};

struct EggRecord {
  std::string scenario_id;
  Block block = Block::Training;
  std::vector<TrialRecord> trials;
  EggOutcome outcome = EggOutcome::Pending;
  std::optional<int> difficulty;

  bool operator==(const EggRecord&) const = default;
};

struct Session {
  std::string id;
  Condition condition = Condition::Rules;
  std::uint64_t seed = 0;
  std::vector<EggRecord> eggs;  // training, baseline x3, treatment x3
  std::size_t current = 0;  // == eggs.size() once every egg is done
  SessionStatus status = SessionStatus::InProgress;
  std::map<std::string, nlohmann::ordered_json> explanations;  // served payloads by scenario
  std::map<std::string, bool> explanation_fallback;  // language rewrite fell back
  std::vector<Event> history;

  const EggRecord* current_egg() const { return current < eggs.size() ? &eggs[current] : nullptr; }
  EggRecord* find_egg(const std::string& scenario_id);
  const EggRecord* find_egg(const std::string& scenario_id) const;

  /// State equality, ignoring nothing but the history container itself.
  bool same_state(const Session& other) const;
};

struct TrialOutcome {
  TrialRecord record;
  bool egg_completed = false;
  EggOutcome egg_outcome = EggOutcome::Pending;
  bool session_completed = false;
};

struct HarnessOptions {
  std::optional<LlmConfig> llm;  // language condition rewrite
  std::function<std::string()> clock = utc_timestamp;
};

class Harness {
 public:
  explicit Harness(std::vector<Scenario> scenarios, HarnessOptions options = {});

  const std::vector<Scenario>& scenarios() const noexcept { return scenarios_; }
  const Scenario& scenario(const std::string& id) const;  // throws ProtocolError "unknown_scenario"

  /// Training egg first, then the six other eggs seeded-shuffled into baseline and treatment.
  Session start_session(Condition condition, std::uint64_t seed, const std::string& id) const;

  /// Throws ProtocolError with codes: session_completed, unknown_scenario, trials_exhausted,
  /// egg_completed, egg_not_active, out_of_bounds, fixed_parameter_modified, no_adjustment,
  /// uncookable.
  TrialOutcome submit_trial(Session& session, const std::string& scenario_id, const EggParameters& proposed) const;

  /// Format None outside the treatment block; otherwise the cached or freshly rendered explanation.
  RenderedExplanation get_explanation(Session& session, const std::string& scenario_id) const;

  /// Rates `scenario_id`, or the most recently completed egg when empty.
  /// Throws ProtocolError: invalid_rating, no_completed_egg, egg_not_completed, already_rated.
  void record_difficulty(Session& session, const std::string& scenario_id, int rating) const;

  /// Rebuilds a session from its events; throws LoadError on an inconsistent log.
  Session replay(const std::vector<Event>& events) const;

  /// Whether `p` stays inside every Tune range and keeps NoTune tunables at the recommendation.
  bool adheres(const Scenario& s, const EggParameters& p) const;

 private:
  void apply(Session& session, const Event& e) const;
  Event make_event(const Session& session, const char* type, nlohmann::ordered_json payload) const;
  void commit(Session& session, std::vector<Event> events) const;

  std::vector<Scenario> scenarios_;
  std::map<std::string, std::size_t> by_id_;
  std::map<std::string, ScenarioExplanation> explanations_;
  HarnessOptions options_;
};

struct BlockMetrics {
  std::size_t eggs = 0;  // completed eggs in the block
  std::size_t successes = 0;
  double success_rate = 0.0;
  std::optional<double> mean_trials_to_success;  // over successful eggs
};

struct EggMetrics {
  std::string scenario_id;
  Block block = Block::Training;
  EggOutcome outcome = EggOutcome::Pending;
  std::size_t trials_used = 0;
  std::optional<std::size_t> trials_to_success;  // retries before success, 0..4
  bool adherent = false;  // every trial inside the explanation
};

struct SessionMetrics {
  BlockMetrics training;
  BlockMetrics baseline;
  BlockMetrics treatment;
  std::vector<EggMetrics> eggs;
  std::optional<double> adherence;  // over successful treatment eggs
  bool partial = false;

  const BlockMetrics& block(Block b) const;
};

SessionMetrics session_metrics(const Session& session);

nlohmann::ordered_json metrics_to_json(const SessionMetrics& m);
/// Client view of a session: no optimum values.
nlohmann::ordered_json session_to_json(const Session& session, const Harness& harness);
nlohmann::ordered_json trial_to_json(const TrialRecord& t);

enum class PolicyKind { ExplanationFollowing, RangeUniform, Random, Midpoint };

std::string to_string(PolicyKind k);
PolicyKind policy_from_string(std::string_view s);  // throws UsageError

/// Share of each bound width used by the Random policy's perturbation.
inline constexpr double kRandomPolicyNoise = 0.10;

struct AgentRun {
  Session session;
  SessionMetrics metrics;
};

/// Plays a full session with a scripted policy; deterministic per seed.
AgentRun run_agent(const Harness& harness, PolicyKind policy, Condition condition, std::uint64_t seed);

}  // namespace xbo
