#include "xbo/harness.hpp"

#include <algorithm>
#include <cmath>

#include "xbo/errors.hpp"
#include "xbo/random.hpp"

namespace xbo {

namespace {

constexpr std::uint64_t kAssignmentStream = 0xb10c;
constexpr std::uint64_t kAgentStream = 0xa6e7;
constexpr int kMaxRejectedProposals = 3;
constexpr int kMaxProposalAttempts = 1000;

const std::string& str(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw LoadError(std::string("event payload lacks '") + key + "'");
  return j[key].get_ref<const std::string&>();
}

Block block_from_string(std::string_view s) {
  for (Block b : {Block::Training, Block::Baseline, Block::Treatment}) {
    if (to_string(b) == s) return b;
  }
  throw LoadError("unknown block '" + std::string(s) + "'");
}

EggOutcome outcome_from_string(std::string_view s) {
  for (EggOutcome o : {EggOutcome::Pending, EggOutcome::Success, EggOutcome::Failure}) {
    if (to_string(o) == s) return o;
  }
  throw LoadError("unknown egg outcome '" + std::string(s) + "'");
}

template <typename T>
nlohmann::ordered_json or_null(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

void finish_block(BlockMetrics& m, std::size_t retries_sum) {
  m.success_rate = m.eggs ? static_cast<double>(m.successes) / static_cast<double>(m.eggs) : 0.0;
  if (m.successes) m.mean_trials_to_success = static_cast<double>(retries_sum) / static_cast<double>(m.successes);
}

nlohmann::ordered_json block_json(const BlockMetrics& m) {
  nlohmann::ordered_json j;
  j["eggs"] = m.eggs;
  j["successes"] = m.successes;
  j["success_rate"] = m.success_rate;
  j["mean_trials_to_success"] = or_null(m.mean_trials_to_success);
  return j;
}

}  // namespace

std::string to_string(Condition c) {
  switch (c) {
    case Condition::Visual: return "visual";
    case Condition::Rules: return "rules";
    case Condition::Language: return "language";
  }
  return "rules";
}

std::string to_string(Block b) {
  switch (b) {
    case Block::Training: return "training";
    case Block::Baseline: return "baseline";
    case Block::Treatment: return "treatment";
  }
  return "training";
}

std::string to_string(EggOutcome o) {
  switch (o) {
    case EggOutcome::Pending: return "pending";
    case EggOutcome::Success: return "success";
    case EggOutcome::Failure: return "failure";
  }
  return "pending";
}

std::string to_string(SessionStatus s) { return s == SessionStatus::Completed ? "completed" : "in_progress"; }

Condition condition_from_string(std::string_view s) {
  for (Condition c : {Condition::Visual, Condition::Rules, Condition::Language}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown condition '" + std::string(s) + "' (expected visual, rules or language)");
}

ExplanationFormat format_for(Condition c) {
  switch (c) {
    case Condition::Visual: return ExplanationFormat::Visual;
    case Condition::Rules: return ExplanationFormat::Rules;
    case Condition::Language: return ExplanationFormat::Language;
  }
  return ExplanationFormat::Rules;
}

EggRecord* Session::find_egg(const std::string& scenario_id) {
  for (auto& e : eggs) {
    if (e.scenario_id == scenario_id) return &e;
  }
  return nullptr;
}

const EggRecord* Session::find_egg(const std::string& scenario_id) const {
  return const_cast<Session*>(this)->find_egg(scenario_id);
}

bool Session::same_state(const Session& o) const {
  return id == o.id && condition == o.condition && seed == o.seed && eggs == o.eggs && current == o.current &&
         status == o.status && explanations == o.explanations && explanation_fallback == o.explanation_fallback;
}

Harness::Harness(std::vector<Scenario> scenarios, HarnessOptions options)
    : scenarios_(std::move(scenarios)), options_(std::move(options)) {
  for (std::size_t i = 0; i < scenarios_.size(); ++i) {
    by_id_[scenarios_[i].id] = i;
    explanations_[scenarios_[i].id] = scenario_explanation(scenarios_[i]);
  }
  if (!options_.clock) options_.clock = utc_timestamp;
}

const Scenario& Harness::scenario(const std::string& id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw ProtocolError("unknown_scenario", "no scenario with id '" + id + "'");
  return scenarios_[it->second];
}

Event Harness::make_event(const Session& session, const char* type, nlohmann::ordered_json payload) const {
  return Event{options_.clock(), session.id, type, std::move(payload)};
}

void Harness::commit(Session& session, std::vector<Event> events) const {
  for (auto& e : events) {
    apply(session, e);
    session.history.push_back(std::move(e));
  }
}

Session Harness::start_session(Condition condition, std::uint64_t seed, const std::string& id) const {
  if (id.empty()) throw UsageError("session id must not be empty");
  std::vector<std::string> training;
  std::vector<std::string> others;
  for (const auto& s : scenarios_) (s.is_training ? training : others).push_back(s.id);
  if (training.size() != 1 || others.size() < 2 * kBlockSize) {
    throw ConfigError("a session needs exactly one training scenario and at least six others");
  }
  Rng rng(derive_seed(seed, kAssignmentStream));
  rng.shuffle(others);

  nlohmann::ordered_json eggs = nlohmann::ordered_json::array();
  eggs.push_back({{"scenario_id", training.front()}, {"block", to_string(Block::Training)}});
  for (std::size_t i = 0; i < 2 * kBlockSize; ++i) {
    eggs.push_back({{"scenario_id", others[i]}, {"block", to_string(i < kBlockSize ? Block::Baseline : Block::Treatment)}});
  }
  Session session;
  session.id = id;
  commit(session, {make_event(session, event_type::kSessionStarted,
                              {{"condition", to_string(condition)}, {"seed", seed}, {"eggs", std::move(eggs)}})});
  return session;
}

bool Harness::adheres(const Scenario& s, const EggParameters& p) const {
  const auto& d = explanations_.at(s.id).decision;
  for (Param q : kAllParams) {
    if (s.is_fixed(q)) continue;
    const auto& e = d.entries[index(q)];
    if (e.tune) {
      const Interval shown = displayed_range(e.name, e.range);
      if (!shown.contains(p[q])) return false;
    } else if (p[q] != s.recommended[q]) {
      return false;
    }
  }
  return true;
}

TrialOutcome Harness::submit_trial(Session& session, const std::string& scenario_id,
                                   const EggParameters& proposed) const {
  const EggRecord* egg = session.find_egg(scenario_id);
  if (!egg) throw ProtocolError("unknown_scenario", "scenario '" + scenario_id + "' is not part of this session");
  if (egg->trials.size() >= kMaxTrials) {
    throw ProtocolError("trials_exhausted", "all " + std::to_string(kMaxTrials) + " trials for '" + scenario_id +
                                                "' have been used");
  }
  if (egg->outcome == EggOutcome::Success) {
    throw ProtocolError("egg_completed", "'" + scenario_id + "' was already cooked perfectly");
  }
  if (session.status == SessionStatus::Completed) throw ProtocolError("session_completed", "the session is over");
  if (session.current_egg() != egg) {
    throw ProtocolError("egg_not_active", "'" + scenario_id + "' is not the current egg");
  }

  const Scenario& s = scenario(scenario_id);
  bool adjusted = false;
  for (Param p : kAllParams) {
    const std::string key(info(p).key);
    if (const auto& f = s.fixed[index(p)]) {
      if (proposed[p] != *f) {
        throw ProtocolError("fixed_parameter_modified", "parameter '" + key + "' is fixed at " + format_number(*f, 6));
      }
      continue;
    }
    if (!std::isfinite(proposed[p]) || !s.bounds[index(p)].contains(proposed[p])) {
      throw ProtocolError("out_of_bounds", "parameter '" + key + "' must lie in [" +
                                               format_number(s.bounds[index(p)].lower, 6) + ", " +
                                               format_number(s.bounds[index(p)].upper, 6) + "]");
    }
    adjusted = adjusted || proposed[p] != s.recommended[p];
  }
  if (!adjusted) throw ProtocolError("no_adjustment", "change at least one tunable parameter before cooking");

  double t = 0.0;
  try {
    t = cooking_time_s(proposed);
  } catch (const UncookableError& e) {
    throw ProtocolError("uncookable", e.what());
  }
  const FeedbackGrade grade = classify_feedback(t);
  const std::size_t idx = egg->trials.size() + 1;
  const bool within = egg->block == Block::Treatment && adheres(s, proposed);

  std::vector<Event> events;
  events.push_back(make_event(session, event_type::kTrialSubmitted,
                              {{"scenario_id", scenario_id},
                               {"index", idx},
                               {"submitted", parameters_to_json(proposed)},
                               {"within_explanation_range", within}}));
  events.push_back(make_event(session, event_type::kFeedbackIssued,
                              {{"scenario_id", scenario_id}, {"index", idx}, {"cook_time_s", t},
                               {"grade", std::string(to_string(grade))}}));
  TrialOutcome out;
  if (grade == FeedbackGrade::Perfect || idx == kMaxTrials) {
    out.egg_completed = true;
    out.egg_outcome = grade == FeedbackGrade::Perfect ? EggOutcome::Success : EggOutcome::Failure;
    events.push_back(make_event(session, event_type::kEggCompleted,
                                {{"scenario_id", scenario_id}, {"outcome", to_string(out.egg_outcome)}}));
    if (session.current + 1 == session.eggs.size()) {
      out.session_completed = true;
      events.push_back(make_event(session, event_type::kSessionCompleted, nlohmann::ordered_json::object()));
    }
  }
  commit(session, std::move(events));
  out.record = session.find_egg(scenario_id)->trials.back();
  return out;
}

RenderedExplanation Harness::get_explanation(Session& session, const std::string& scenario_id) const {
  const EggRecord* egg = session.find_egg(scenario_id);
  if (!egg) throw ProtocolError("unknown_scenario", "scenario '" + scenario_id + "' is not part of this session");
  if (egg->block != Block::Treatment) return RenderedExplanation{};
  if (auto it = session.explanations.find(scenario_id); it != session.explanations.end()) {
    return rendered_from_json(it->second);
  }
  const auto& ex = explanations_.at(scenario_id);
  RenderedExplanation r = render(format_for(session.condition), ex.decision, ex.impacts);
  bool fallback = false;
  if (r.format == ExplanationFormat::Language && options_.llm) {
    const auto rewrite = llm_rewrite(r.text, ex.decision, *options_.llm);
    r.text = rewrite.text;
    fallback = rewrite.fallback;
  }
  commit(session, {make_event(session, event_type::kExplanationServed,
                              {{"scenario_id", scenario_id}, {"explanation", rendered_to_json(r)},
                               {"llm_fallback", fallback}})});
  return r;
}

void Harness::record_difficulty(Session& session, const std::string& scenario_id, int rating) const {
  if (rating < 1 || rating > 7) throw ProtocolError("invalid_rating", "difficulty must be an integer from 1 to 7");
  const EggRecord* egg = nullptr;
  if (scenario_id.empty()) {
    for (std::size_t i = session.current; i-- > 0;) {
      if (session.eggs[i].outcome != EggOutcome::Pending) {
        egg = &session.eggs[i];
        break;
      }
    }
    if (!egg) throw ProtocolError("no_completed_egg", "no egg has been completed yet");
  } else {
    egg = session.find_egg(scenario_id);
    if (!egg) throw ProtocolError("unknown_scenario", "scenario '" + scenario_id + "' is not part of this session");
    if (egg->outcome == EggOutcome::Pending) throw ProtocolError("egg_not_completed", "rate an egg after cooking it");
  }
  if (egg->difficulty) throw ProtocolError("already_rated", "'" + egg->scenario_id + "' already has a rating");
  commit(session, {make_event(session, event_type::kDifficultyRecorded,
                              {{"scenario_id", egg->scenario_id}, {"rating", rating}})});
}

void Harness::apply(Session& session, const Event& e) const {
  const auto& p = e.payload;
  if (e.event == event_type::kSessionStarted) {
    if (!session.eggs.empty()) throw LoadError("session started twice");
    session.id = e.session_id;
    session.condition = condition_from_string(str(p, "condition"));
    if (!p.contains("seed") || !p["seed"].is_number_unsigned()) throw LoadError("session_started lacks a seed");
    session.seed = p["seed"].get<std::uint64_t>();
    if (!p.contains("eggs") || !p["eggs"].is_array()) throw LoadError("session_started lacks eggs");
    for (const auto& egg : p["eggs"]) {
      EggRecord r;
      r.scenario_id = str(egg, "scenario_id");
      if (!by_id_.count(r.scenario_id)) throw LoadError("unknown scenario '" + r.scenario_id + "'");
      r.block = block_from_string(str(egg, "block"));
      session.eggs.push_back(std::move(r));
    }
    return;
  }
  if (session.eggs.empty()) throw LoadError("event '" + e.event + "' before session_started");
  if (e.session_id != session.id) throw LoadError("event belongs to session '" + e.session_id + "'");

  if (e.event == event_type::kSessionCompleted) {
    if (session.current != session.eggs.size()) throw LoadError("session completed with eggs outstanding");
    session.status = SessionStatus::Completed;
    return;
  }
  EggRecord* egg = session.find_egg(str(p, "scenario_id"));
  if (!egg) throw LoadError("event for a scenario outside the session");

  if (e.event == event_type::kTrialSubmitted) {
    if (session.current_egg() != egg) throw LoadError("trial for an egg that is not active");
    TrialRecord t;
    t.scenario_id = egg->scenario_id;
    t.index = p.value("index", std::size_t{0});
    if (t.index != egg->trials.size() + 1 || t.index > kMaxTrials) throw LoadError("trial index out of sequence");
    try {
      t.submitted = parameters_from_json(p.at("submitted"));
    } catch (const std::exception& ex) {
      throw LoadError(std::string("bad trial parameters: ") + ex.what());
    }
    t.within_explanation_range = p.value("within_explanation_range", false);
    t.ts = e.ts;
    egg->trials.push_back(std::move(t));
  } else if (e.event == event_type::kFeedbackIssued) {
    if (egg->trials.empty() || egg->trials.back().index != p.value("index", std::size_t{0})) {
      throw LoadError("feedback for an unknown trial");
    }
    const auto grade = grade_from_string(str(p, "grade"));
    if (!grade) throw LoadError("unknown grade");
    egg->trials.back().grade = *grade;
    egg->trials.back().cook_time_s = p.value("cook_time_s", 0.0);
  } else if (e.event == event_type::kEggCompleted) {
    if (session.current_egg() != egg) throw LoadError("completion for an egg that is not active");
    egg->outcome = outcome_from_string(str(p, "outcome"));
    ++session.current;
  } else if (e.event == event_type::kExplanationServed) {
    if (!p.contains("explanation")) throw LoadError("explanation_served lacks the explanation");
    session.explanations[egg->scenario_id] = p["explanation"];
    session.explanation_fallback[egg->scenario_id] = p.value("llm_fallback", false);
  } else if (e.event == event_type::kDifficultyRecorded) {
    egg->difficulty = p.value("rating", 0);
  } else {
    throw LoadError("unknown event type '" + e.event + "'");
  }
}

Session Harness::replay(const std::vector<Event>& events) const {
  Session session;
  if (events.empty()) throw LoadError("empty session log");
  if (events.front().event != event_type::kSessionStarted) throw LoadError("log does not start with session_started");
  session.id = events.front().session_id;
  for (const auto& e : events) {
    apply(session, e);
    session.history.push_back(e);
  }
  return session;
}

const BlockMetrics& SessionMetrics::block(Block b) const {
  switch (b) {
    case Block::Training: return training;
    case Block::Baseline: return baseline;
    case Block::Treatment: return treatment;
  }
  return training;
}

SessionMetrics session_metrics(const Session& session) {
  SessionMetrics m;
  m.partial = session.status != SessionStatus::Completed;
  std::size_t retries[3] = {0, 0, 0};
  std::size_t adherent_successes = 0;
  for (const auto& egg : session.eggs) {
    EggMetrics em;
    em.scenario_id = egg.scenario_id;
    em.block = egg.block;
    em.outcome = egg.outcome;
    em.trials_used = egg.trials.size();
    em.adherent = !egg.trials.empty() && std::all_of(egg.trials.begin(), egg.trials.end(), [](const TrialRecord& t) {
                    return t.within_explanation_range;
                  });
    if (egg.outcome != EggOutcome::Pending) {
      BlockMetrics& b = egg.block == Block::Training ? m.training
                        : egg.block == Block::Baseline ? m.baseline
                                                       : m.treatment;
      ++b.eggs;
      if (egg.outcome == EggOutcome::Success) {
        ++b.successes;
        em.trials_to_success = egg.trials.size() - 1;
        retries[static_cast<int>(egg.block)] += *em.trials_to_success;
        if (egg.block == Block::Treatment && em.adherent) ++adherent_successes;
      }
    }
    m.eggs.push_back(std::move(em));
  }
  finish_block(m.training, retries[0]);
  finish_block(m.baseline, retries[1]);
  finish_block(m.treatment, retries[2]);
  if (m.treatment.successes) {
    m.adherence = static_cast<double>(adherent_successes) / static_cast<double>(m.treatment.successes);
  }
  return m;
}

nlohmann::ordered_json metrics_to_json(const SessionMetrics& m) {
  nlohmann::ordered_json j;
  j["partial"] = m.partial;
  j["blocks"] = {{"training", block_json(m.training)},
                 {"baseline", block_json(m.baseline)},
                 {"treatment", block_json(m.treatment)}};
  auto eggs = nlohmann::ordered_json::array();
  for (const auto& e : m.eggs) {
    eggs.push_back({{"scenario_id", e.scenario_id},
                    {"block", to_string(e.block)},
                    {"outcome", to_string(e.outcome)},
                    {"trials_used", e.trials_used},
                    {"trials_to_success", or_null(e.trials_to_success)},
                    {"adherent", e.adherent}});
  }
  j["eggs"] = std::move(eggs);
  j["adherence"] = or_null(m.adherence);
  return j;
}

nlohmann::ordered_json trial_to_json(const TrialRecord& t) {
  nlohmann::ordered_json j;
  j["index"] = t.index;
  j["submitted"] = parameters_to_json(t.submitted);
  j["cook_time_s"] = t.cook_time_s;
  j["grade"] = std::string(to_string(t.grade));
  j["ts"] = t.ts;
  j["within_explanation_range"] = t.within_explanation_range;
  return j;
}

nlohmann::ordered_json session_to_json(const Session& session, const Harness& harness) {
  nlohmann::ordered_json j;
  j["id"] = session.id;
  j["condition"] = to_string(session.condition);
  j["seed"] = session.seed;
  j["status"] = to_string(session.status);
  if (const EggRecord* egg = session.current_egg()) {
    const Scenario& s = harness.scenario(egg->scenario_id);
    nlohmann::ordered_json cur;
    cur["scenario_id"] = egg->scenario_id;
    cur["egg_type"] = s.egg_type;
    cur["block"] = to_string(egg->block);
    cur["trials_used"] = egg->trials.size();
    cur["trials_remaining"] = kMaxTrials - egg->trials.size();
    cur["explanation_available"] = egg->block == Block::Treatment;
    cur["scenario"] = scenario_public_json(s);
    j["current"] = std::move(cur);
  } else {
    j["current"] = nullptr;
  }
  auto eggs = nlohmann::ordered_json::array();
  for (const auto& egg : session.eggs) {
    nlohmann::ordered_json e;
    e["scenario_id"] = egg.scenario_id;
    e["egg_type"] = harness.scenario(egg.scenario_id).egg_type;
    e["block"] = to_string(egg.block);
    e["outcome"] = to_string(egg.outcome);
    auto trials = nlohmann::ordered_json::array();
    for (const auto& t : egg.trials) trials.push_back(trial_to_json(t));
    e["trials"] = std::move(trials);
    e["difficulty"] = or_null(egg.difficulty);
    eggs.push_back(std::move(e));
  }
  j["eggs"] = std::move(eggs);
  return j;
}

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::ExplanationFollowing: return "explanation-following";
    case PolicyKind::RangeUniform: return "range-uniform";
    case PolicyKind::Random: return "random";
    case PolicyKind::Midpoint: return "midpoint";
  }
  return "random";
}

PolicyKind policy_from_string(std::string_view s) {
  for (PolicyKind k : {PolicyKind::ExplanationFollowing, PolicyKind::RangeUniform, PolicyKind::Random,
                       PolicyKind::Midpoint}) {
    if (to_string(k) == s) return k;
  }
  throw UsageError("unknown policy '" + std::string(s) +
                   "' (expected explanation-following, range-uniform, random or midpoint)");
}

namespace {

// What an agent reads off the served explanation.
std::optional<TuneDecision> read_explanation(const RenderedExplanation& r) {
  try {
    switch (r.format) {
      case ExplanationFormat::None: return std::nullopt;
      case ExplanationFormat::Rules: return parse_rules(r.text);
      case ExplanationFormat::Language: return parse_language(r.text);
      case ExplanationFormat::Visual: return decision_from_visual(*r.visual);
    }
  } catch (const ConfigError&) {
    return std::nullopt;
  }
  return std::nullopt;
}

EggParameters uniform_in_bounds(const Scenario& s, Rng& rng) {
  EggParameters p = s.recommended;
  for (Param q : kAllParams) {
    if (!s.is_fixed(q)) p[q] = rng.uniform(s.bounds[index(q)].lower, s.bounds[index(q)].upper);
  }
  return p;
}

EggParameters propose(PolicyKind policy, const Scenario& s, const std::optional<TuneDecision>& d, Rng& rng) {
  EggParameters p = s.recommended;
  const auto tune_range = [&](Param q) -> std::optional<Interval> {
    if (!d) return std::nullopt;
    for (const auto& e : d->entries) {
      if (e.name == info(q).key && e.tune) return e.range;
    }
    return std::nullopt;
  };
  switch (policy) {
    case PolicyKind::RangeUniform:
      return uniform_in_bounds(s, rng);
    case PolicyKind::ExplanationFollowing:
      if (!d) return uniform_in_bounds(s, rng);
      for (Param q : kAllParams) {
        if (s.is_fixed(q)) continue;
        if (auto r = tune_range(q)) p[q] = rng.uniform(r->lower, r->upper);
      }
      return p;
    case PolicyKind::Midpoint:
      for (Param q : kAllParams) {
        if (s.is_fixed(q)) continue;
        if (!d) {
          p[q] = 0.5 * (s.bounds[index(q)].lower + s.bounds[index(q)].upper);
        } else if (auto r = tune_range(q)) {
          p[q] = 0.5 * (r->lower + r->upper);
        }
      }
      return p;
    case PolicyKind::Random:
      for (Param q : kAllParams) {
        if (s.is_fixed(q)) continue;
        const Interval b = s.bounds[index(q)];
        const double noise = kRandomPolicyNoise * b.width();
        p[q] = std::clamp(s.recommended[q] + rng.uniform(-noise, noise), b.lower, b.upper);
      }
      return p;
  }
  return p;
}

}  // namespace

AgentRun run_agent(const Harness& harness, PolicyKind policy, Condition condition, std::uint64_t seed) {
  AgentRun run;
  run.session = harness.start_session(condition, seed, "agent-" + to_string(policy) + "-" + std::to_string(seed));
  Session& session = run.session;
  Rng rng(derive_seed(seed, kAgentStream));
  while (const EggRecord* egg = session.current_egg()) {
    const std::string id = egg->scenario_id;
    const Scenario& s = harness.scenario(id);
    const auto decision = read_explanation(harness.get_explanation(session, id));
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kMaxProposalAttempts) throw NumericalError("agent could not find an acceptable proposal");
      // A policy whose own proposal keeps being rejected falls back to a uniform draw.
      const EggParameters proposal =
          attempt < kMaxRejectedProposals ? propose(policy, s, decision, rng) : uniform_in_bounds(s, rng);
      try {
        harness.submit_trial(session, id, proposal);
        break;
      } catch (const ProtocolError& e) {
        if (e.code() != "no_adjustment" && e.code() != "uncookable") throw;
      }
    }
  }
  run.metrics = session_metrics(session);
  return run;
}

}  // namespace xbo
