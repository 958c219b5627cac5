#include "xbo/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "xbo/errors.hpp"

namespace xbo {

namespace {

[[noreturn]] void fail(const std::string& scenario, const std::string& field, const std::string& what) {
  throw LoadError("scenario '" + scenario + "', field '" + field + "': " + what);
}

double number_at(const nlohmann::json& obj, const std::string& key, const std::string& id, const std::string& field) {
  if (!obj.is_object() || !obj.contains(key)) fail(id, field + "." + key, "missing");
  if (!obj[key].is_number()) fail(id, field + "." + key, "must be a number");
  return obj[key].get<double>();
}

EggParameters parameters_at(const nlohmann::json& s, const std::string& field, const std::string& id) {
  if (!s.contains(field) || !s[field].is_object()) fail(id, field, "missing or not an object");
  EggParameters p;
  for (Param q : kAllParams) p[q] = number_at(s[field], std::string(info(q).key), id, field);
  for (const auto& [k, v] : s[field].items()) {
    if (!param_from_key(k)) fail(id, field + "." + k, "unknown parameter");
  }
  return p;
}

Scenario parse_one(const nlohmann::json& s, std::size_t position) {
  Scenario out;
  const std::string where = "#" + std::to_string(position);
  if (!s.is_object()) fail(where, "", "must be an object");
  if (!s.contains("id") || !s["id"].is_string() || s["id"].get<std::string>().empty()) fail(where, "id", "missing");
  out.id = s["id"].get<std::string>();
  const std::string& id = out.id;
  if (!s.contains("egg_type") || !s["egg_type"].is_string()) fail(id, "egg_type", "missing");
  out.egg_type = s["egg_type"].get<std::string>();
  if (s.contains("is_training")) {
    if (!s["is_training"].is_boolean()) fail(id, "is_training", "must be a boolean");
    out.is_training = s["is_training"].get<bool>();
  }

  if (!s.contains("bounds") || !s["bounds"].is_object()) fail(id, "bounds", "missing or not an object");
  for (Param p : kAllParams) {
    const std::string key(info(p).key);
    const auto& b = s["bounds"];
    if (!b.contains(key)) fail(id, "bounds." + key, "missing");
    if (!b[key].is_array() || b[key].size() != 2 || !b[key][0].is_number() || !b[key][1].is_number()) {
      fail(id, "bounds." + key, "must be [lo, hi]");
    }
    const Interval iv{b[key][0].get<double>(), b[key][1].get<double>()};
    if (!(iv.lower < iv.upper)) fail(id, "bounds." + key, "lower must be below upper");
    if (iv.lower < info(p).lower || iv.upper > info(p).upper) fail(id, "bounds." + key, "outside the model's domain");
    out.bounds[index(p)] = iv;
  }
  for (const auto& [k, v] : s["bounds"].items()) {
    if (!param_from_key(k)) fail(id, "bounds." + k, "unknown parameter");
  }

  if (s.contains("fixed")) {
    if (!s["fixed"].is_object()) fail(id, "fixed", "must be an object");
    for (const auto& [k, v] : s["fixed"].items()) {
      const auto p = param_from_key(k);
      if (!p) fail(id, "fixed." + k, "unknown parameter");
      if (!v.is_number()) fail(id, "fixed." + k, "must be a number");
      out.fixed[index(*p)] = v.get<double>();
    }
  }
  out.recommended = parameters_at(s, "recommended", id);
  out.optimal = parameters_at(s, "optimal", id);

  for (Param p : kAllParams) {
    const std::string key(info(p).key);
    const Interval b = out.bounds[index(p)];
    if (!b.contains(out.recommended[p])) fail(id, "recommended." + key, "outside bounds");
    if (!b.contains(out.optimal[p])) fail(id, "optimal." + key, "outside bounds");
    if (const auto& f = out.fixed[index(p)]) {
      if (!b.contains(*f)) fail(id, "fixed." + key, "outside bounds");
      if (out.recommended[p] != *f) fail(id, "recommended." + key, "differs from the fixed value");
      if (out.optimal[p] != *f) fail(id, "optimal." + key, "differs from the fixed value");
    }
  }
  try {
    const double t = cooking_time_s(out.optimal);
    if (classify_feedback(t) != FeedbackGrade::Perfect) {
      fail(id, "optimal", "cooks in " + std::to_string(t) + " s, outside the Perfect band");
    }
  } catch (const UncookableError& e) {
    fail(id, "optimal", e.what());
  }
  return out;
}

}  // namespace

std::vector<Param> Scenario::perturbed() const {
  std::vector<Param> out;
  for (Param p : kAllParams) {
    if (!is_fixed(p) && recommended[p] != optimal[p]) out.push_back(p);
  }
  return out;
}

SearchSpace Scenario::space() const { return SearchSpace::egg(bounds, fixed); }

std::vector<Scenario> parse_scenarios(const nlohmann::json& doc) {
  if (!doc.is_array()) throw LoadError("scenario file must contain a JSON array");
  std::vector<Scenario> out;
  std::set<std::string> ids;
  std::set<std::string> eggs;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    Scenario s = parse_one(doc[i], i);
    if (!ids.insert(s.id).second) fail(s.id, "id", "duplicate id");
    if (!eggs.insert(s.egg_type).second) fail(s.id, "egg_type", "duplicate egg type");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open scenario file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("scenario file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_scenarios(doc);
}

nlohmann::ordered_json parameters_to_json(const EggParameters& p) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (Param q : kAllParams) j[std::string(info(q).key)] = p[q];
  return j;
}

EggParameters parameters_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("parameters must be a JSON object");
  EggParameters p;
  for (Param q : kAllParams) {
    const std::string key(info(q).key);
    if (!j.contains(key) || !j[key].is_number()) throw ConfigError("missing numeric parameter '" + key + "'");
    p[q] = j[key].get<double>();
  }
  for (const auto& [k, v] : j.items()) {
    if (!param_from_key(k)) throw ConfigError("unknown parameter '" + k + "'");
  }
  return p;
}

nlohmann::ordered_json scenario_public_json(const Scenario& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["egg_type"] = s.egg_type;
  j["is_training"] = s.is_training;
  nlohmann::ordered_json bounds = nlohmann::ordered_json::object();
  nlohmann::ordered_json fixed = nlohmann::ordered_json::object();
  for (Param p : kAllParams) {
    const std::string key(info(p).key);
    bounds[key] = {s.bounds[index(p)].lower, s.bounds[index(p)].upper};
    if (s.is_fixed(p)) fixed[key] = *s.fixed[index(p)];
  }
  j["bounds"] = std::move(bounds);
  j["fixed"] = std::move(fixed);
  j["recommended"] = parameters_to_json(s.recommended);
  return j;
}

nlohmann::ordered_json scenario_to_json(const Scenario& s) {
  auto j = scenario_public_json(s);
  j["optimal"] = parameters_to_json(s.optimal);
  return j;
}

ScenarioExplanation scenario_explanation(const Scenario& s) {
  ScenarioExplanation out;
  out.decision.predicted = {0.0, FeedbackBands{}.perfect_half_width()};
  const auto tuned = s.perturbed();
  double t_rec = 0.0;
  bool rec_cookable = true;
  try {
    t_rec = cooking_time_s(s.recommended);
  } catch (const UncookableError&) {
    rec_cookable = false;
  }
  for (Param p : kAllParams) {
    TuneEntry e;
    e.name = std::string(info(p).key);
    e.fixed = s.is_fixed(p);
    e.tune = std::find(tuned.begin(), tuned.end(), p) != tuned.end();
    if (e.tune) {
      const Interval b = s.bounds[index(p)];
      const double w = kTuneRangeFraction * b.width();
      const double opt = s.optimal[p];
      // Full width towards the recommendation, half width away from it: the
      // optimum is inside the range but never its midpoint.
      const bool rec_below = s.recommended[p] < opt;
      e.range = {std::max(b.lower, opt - (rec_below ? w : 0.5 * w)),
                 std::min(b.upper, opt + (rec_below ? 0.5 * w : w))};
      EggParameters moved = s.recommended;
      moved[p] = opt;
      try {
        e.impact = rec_cookable ? std::abs(t_rec - cooking_time_s(moved)) : 1.0;
      } catch (const UncookableError&) {
        e.impact = 1.0;
      }
    }
    out.impacts.push_back(e.impact);
    out.decision.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace xbo
