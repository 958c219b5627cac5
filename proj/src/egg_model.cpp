#include "xbo/egg_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "xbo/errors.hpp"

namespace xbo {

std::optional<Param> param_from_key(std::string_view key) {
  for (Param p : kAllParams) {
    if (info(p).key == key) return p;
  }
  return std::nullopt;
}

double& EggParameters::operator[](Param p) noexcept {
  switch (p) {
    case Param::Mass: return mass_g;
    case Param::Lambda: return lambda;
    case Param::Ywr: return ywr;
    case Param::TEgg: return t_egg_c;
    case Param::TYolk: return t_yolk_c;
    case Param::Altitude: break;
  }
  return altitude_m;
}

double EggParameters::operator[](Param p) const noexcept {
  return const_cast<EggParameters&>(*this)[p];
}

std::array<double, kParamCount> EggParameters::to_array() const noexcept {
  return {mass_g, lambda, ywr, t_egg_c, t_yolk_c, altitude_m};
}

EggParameters EggParameters::from_array(const std::array<double, kParamCount>& v) noexcept {
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

void validate_bounds(const EggParameters& p) {
  for (Param q : kAllParams) {
    const auto& pi = info(q);
    const double v = p[q];
    if (!std::isfinite(v) || v < pi.lower || v > pi.upper) {
      std::ostringstream os;
      os << pi.key << " = " << v << " outside [" << pi.lower << ", " << pi.upper << "]";
      throw DomainError(os.str());
    }
  }
}

bool within_bounds(const EggParameters& p) noexcept {
  return std::all_of(kAllParams.begin(), kAllParams.end(), [&](Param q) {
    const double v = p[q];
    return std::isfinite(v) && v >= info(q).lower && v <= info(q).upper;
  });
}

double boiling_point_c(double altitude_m) {
  const auto& a = info(Param::Altitude);
  if (!std::isfinite(altitude_m) || altitude_m < a.lower || altitude_m > a.upper) {
    std::ostringstream os;
    os << "altitude_m = " << altitude_m << " outside [" << a.lower << ", " << a.upper << "]";
    throw DomainError(os.str());
  }
  // Pressure in inHg from the standard-atmosphere relation, then the boiling
  // point in °F, converted to °C.
  const double pressure_inhg = 29.921 * std::pow(1.0 - 0.0000068753 * altitude_m, 5.2559);
  const double boiling_f = 49.161 * std::log(pressure_inhg) + 44.932;
  return (boiling_f - 32.0) * 5.0 / 9.0;
}

double cooking_time_s(const EggParameters& p) {
  const double t_water = boiling_point_c(p.altitude_m);
  if (!(p.mass_g > 0.0)) throw DomainError("mass_g must be positive");
  if (p.t_yolk_c >= t_water) {
    std::ostringstream os;
    os << "uncookable configuration: yolk target " << p.t_yolk_c
       << " °C is not below the boiling point " << t_water << " °C";
    throw UncookableError(os.str());
  }
  const double ratio = p.ywr * (p.t_egg_c - t_water) / (p.t_yolk_c - t_water);
  if (!(ratio > 1.0)) {
    std::ostringstream os;
    os << "uncookable configuration: log argument ywr*(T_egg-T_water)/(T_yolk-T_water) = "
       << ratio << " must exceed 1";
    throw UncookableError(os.str());
  }
  return p.lambda * std::cbrt(p.mass_g * p.mass_g) * std::log(ratio);
}

std::string_view to_string(FeedbackGrade g) noexcept {
  switch (g) {
    case FeedbackGrade::Undercooked: return "undercooked";
    case FeedbackGrade::SlightlyUndercooked: return "slightly_undercooked";
    case FeedbackGrade::Perfect: return "perfect";
    case FeedbackGrade::SlightlyOvercooked: return "slightly_overcooked";
    case FeedbackGrade::Overcooked: break;
  }
  return "overcooked";
}

std::optional<FeedbackGrade> grade_from_string(std::string_view s) {
  for (auto g : {FeedbackGrade::Undercooked, FeedbackGrade::SlightlyUndercooked, FeedbackGrade::Perfect,
                 FeedbackGrade::SlightlyOvercooked, FeedbackGrade::Overcooked}) {
    if (to_string(g) == s) return g;
  }
  return std::nullopt;
}

FeedbackGrade classify_feedback(double t_s, const FeedbackBands& bands) {
  if (!(t_s > 0.0) || !std::isfinite(t_s)) throw DomainError("cooking time must be positive and finite");
  if (t_s < bands.undercooked_below) return FeedbackGrade::Undercooked;
  if (t_s < bands.perfect_lo) return FeedbackGrade::SlightlyUndercooked;
  if (t_s <= bands.perfect_hi) return FeedbackGrade::Perfect;
  if (t_s <= bands.overcooked_above) return FeedbackGrade::SlightlyOvercooked;
  return FeedbackGrade::Overcooked;
}

double cooking_loss(const EggParameters& p, const FeedbackBands& bands) {
  return std::abs(cooking_time_s(p) - bands.perfect_center());
}

SensitivityReport sensitivity_analysis(const EggParameters& base, double fraction) {
  if (!(fraction > 0.0 && fraction <= 0.5)) throw DomainError("fraction must lie in (0, 0.5]");
  const double t_base = cooking_time_s(base);

  SensitivityReport report;
  for (Param q : kAllParams) {
    double sum = 0.0;
    int used = 0;
    for (double sign : {1.0, -1.0}) {
      EggParameters p = base;
      p[q] = base[q] * (1.0 + sign * fraction);
      // Directions leaving the bounds are skipped rather than clipped so that
      // effects stay exact for parameters entering linearly.
      if (p[q] < info(q).lower || p[q] > info(q).upper) continue;
      try {
        sum += std::abs(cooking_time_s(p) - t_base) / t_base;
        ++used;
      } catch (const UncookableError&) {
      }
    }
    report.entries.push_back({q, used ? std::optional<double>(sum / used) : std::nullopt});
  }
  std::stable_sort(report.entries.begin(), report.entries.end(), [](const auto& a, const auto& b) {
    if (a.effect.has_value() != b.effect.has_value()) return a.effect.has_value();
    return a.effect.value_or(0.0) > b.effect.value_or(0.0);
  });
  return report;
}

}  // namespace xbo
