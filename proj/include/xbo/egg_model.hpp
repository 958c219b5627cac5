#pragma once

// Physical egg-cooking model: altitude-corrected boiling point, cooking time,
// feedback grading and one-at-a-time sensitivity analysis.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xbo {

enum class Param : std::size_t { Mass = 0, Lambda, Ywr, TEgg, TYolk, Altitude };

inline constexpr std::size_t kParamCount = 6;

struct ParamInfo {
  std::string_view key;      // JSON / CLI field name
  std::string_view symbol;   // short symbol used in rule text
  std::string_view display;  // full name used in natural-language text
  double lower;
  double upper;
  int precision;  // decimals shown when rendering a value
};

inline constexpr std::array<ParamInfo, kParamCount> kParamInfo{{
    {"mass_g", "M", "Mass (M)", 20.0, 300.0, 0},
    {"lambda", "λ", "lambda (λ)", 25.0, 38.0, 1},
    {"ywr", "ywr", "yolk-to-white ratio (ywr)", 0.4, 1.0, 2},
    {"t_egg_c", "T_egg", "egg temperature (Tegg)", 0.0, 35.0, 0},
    {"t_yolk_c", "T_yolk", "yolk temperature (Tyolk)", 60.0, 90.0, 0},
    {"altitude_m", "A", "altitude (A)", 0.0, 10000.0, 0},
}};

inline constexpr std::array<Param, kParamCount> kAllParams{
    Param::Mass, Param::Lambda, Param::Ywr, Param::TEgg, Param::TYolk, Param::Altitude};

constexpr std::size_t index(Param p) noexcept { return static_cast<std::size_t>(p); }
constexpr const ParamInfo& info(Param p) noexcept { return kParamInfo[index(p)]; }

/// Looks a parameter up by its key ("mass_g", ...). Empty when unknown.
std::optional<Param> param_from_key(std::string_view key);

/// One point of the six-dimensional tuning space, in natural units.
struct EggParameters {
  double mass_g = 0.0;
  double lambda = 0.0;
  double ywr = 0.0;
  double t_egg_c = 0.0;
  double t_yolk_c = 0.0;
  double altitude_m = 0.0;

  double& operator[](Param p) noexcept;
  double operator[](Param p) const noexcept;

  std::array<double, kParamCount> to_array() const noexcept;
  static EggParameters from_array(const std::array<double, kParamCount>& v) noexcept;

  friend bool operator==(const EggParameters&, const EggParameters&) = default;
};

/// Throws DomainError naming the first parameter outside its bounds.
void validate_bounds(const EggParameters& p);
bool within_bounds(const EggParameters& p) noexcept;

/// Water boiling temperature in °C at `altitude_m` (barometric formula, natural log).
double boiling_point_c(double altitude_m);

/// Seconds until the yolk boundary reaches `t_yolk_c`.
/// Throws DomainError for a bad altitude or non-positive mass, UncookableError
/// when the yolk target is at/above boiling or the log argument is <= 1.
double cooking_time_s(const EggParameters& p);

enum class FeedbackGrade { Undercooked, SlightlyUndercooked, Perfect, SlightlyOvercooked, Overcooked };

std::string_view to_string(FeedbackGrade g) noexcept;
std::optional<FeedbackGrade> grade_from_string(std::string_view s);

/// Band edges in seconds. Perfect is the closed interval [perfect_lo, perfect_hi].
struct FeedbackBands {
  double undercooked_below = 215.0;
  double perfect_lo = 260.0;
  double perfect_hi = 285.0;
  double overcooked_above = 330.0;

  double perfect_center() const noexcept { return 0.5 * (perfect_lo + perfect_hi); }
  double perfect_half_width() const noexcept { return 0.5 * (perfect_hi - perfect_lo); }
};

FeedbackGrade classify_feedback(double t_s, const FeedbackBands& bands = {});

/// |cooking_time_s(p) - centre of the Perfect band|; the BO objective for egg scenarios.
double cooking_loss(const EggParameters& p, const FeedbackBands& bands = {});

struct SensitivityEntry {
  Param param;
  std::optional<double> effect;  // empty when both perturbation directions failed
};

struct SensitivityReport {
  std::vector<SensitivityEntry> entries;  // descending by effect, undefined last
};

/// Relative change of cooking time when each parameter is scaled by (1 ± fraction),
/// averaged over the directions that stay in bounds and cookable.
SensitivityReport sensitivity_analysis(const EggParameters& base, double fraction);

}  // namespace xbo
