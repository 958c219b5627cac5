#pragma once

// Study scenarios: an egg type with per-parameter bounds, fixed parameters, the
// (noisy) AI recommendation shown to the user and the hidden optimum.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xbo/bo.hpp"
#include "xbo/egg_model.hpp"
#include "xbo/tntrules.hpp"

namespace xbo {

struct Scenario {
  std::string id;
  std::string egg_type;
  bool is_training = false;
  std::array<Interval, kParamCount> bounds{};
  std::array<std::optional<double>, kParamCount> fixed{};
  EggParameters recommended;
  EggParameters optimal;

  bool is_fixed(Param p) const noexcept { return fixed[index(p)].has_value(); }
  /// Tunable parameters whose recommendation differs from the optimum.
  std::vector<Param> perturbed() const;
  SearchSpace space() const;
};

/// Throws LoadError naming the scenario and field on any schema or invariant violation.
std::vector<Scenario> parse_scenarios(const nlohmann::json& doc);
std::vector<Scenario> load_scenarios(const std::filesystem::path& path);

/// Client-safe view: bounds, fixed mask and recommendation. Never the optimum.
nlohmann::ordered_json scenario_public_json(const Scenario& s);
/// Full record including the optimum, for fixture files only.
nlohmann::ordered_json scenario_to_json(const Scenario& s);

nlohmann::ordered_json parameters_to_json(const EggParameters& p);
/// Reads {key: value} for all six parameters; throws ConfigError naming a missing key.
EggParameters parameters_from_json(const nlohmann::json& j);

/// The explanation a scenario shows in the treatment block: perturbed parameters are
/// Tune with a range around the optimum, everything else NoTune.
struct ScenarioExplanation {
  TuneDecision decision;
  std::vector<double> impacts;
};

/// Share of a parameter's bound width used for Tune ranges.
inline constexpr double kTuneRangeFraction = 0.10;

ScenarioExplanation scenario_explanation(const Scenario& s);

}  // namespace xbo
