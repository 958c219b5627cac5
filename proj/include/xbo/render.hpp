#pragma once

// Rendering a TuneDecision as rule text, a bar-chart specification or a
// natural-language sentence, plus the inverse parsers used to check that every
// format carries the same information.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xbo/tntrules.hpp"

namespace xbo {

enum class ExplanationFormat { None, Rules, Visual, Language };

std::string to_string(ExplanationFormat f);
ExplanationFormat format_from_string(std::string_view s);  // throws ConfigError

/// Fixed-point with trailing zeros (and a bare '.') removed; "-0" becomes "0".
std::string format_number(double value, int precision);

/// Decimals used for a dimension name: the egg parameter's precision, 3 otherwise.
int precision_for(std::string_view name);

/// Range rounded outward to the dimension's precision (what every renderer shows).
Interval displayed_range(std::string_view name, Interval range);
Interval displayed_objective(Interval predicted);

inline constexpr int kObjectivePrecision = 1;

/// "No tune: λ, A, Tune: M ∈ [70, 74], ywr ∈ [0.6, 0.9]\nPredicted objective: [0, 12.5]"
std::string render_rules(const TuneDecision& d);

struct VisualBar {
  std::string name;  // display name
  std::string key;
  double signed_length = 0.0;
  bool tune = false;
  std::optional<Interval> range;  // displayed range, Tune bars only
};

struct VisualSpec {
  std::vector<VisualBar> bars;  // decision order
  std::string axis_label;
};

inline constexpr double kNoTuneBarLength = 0.05;

VisualSpec render_visual(const TuneDecision& d, const std::vector<double>& impacts);
nlohmann::ordered_json visual_to_json(const VisualSpec& v);
VisualSpec visual_from_json(const nlohmann::json& j);  // throws ConfigError

/// "Maintain stability for ... . Fine-tune X between a and b, ... for optimal performance."
std::string render_language(const TuneDecision& d);

/// Inverse of render_rules. Entries come back in egg-parameter order for known
/// symbols; ranges are the displayed (rounded) values.
TuneDecision parse_rules(std::string_view text);
TuneDecision parse_language(std::string_view text);
TuneDecision decision_from_visual(const VisualSpec& v);

struct RenderedExplanation {
  ExplanationFormat format = ExplanationFormat::None;
  std::string text;  // rules / language
  std::optional<VisualSpec> visual;
};

RenderedExplanation render(ExplanationFormat format, const TuneDecision& d, const std::vector<double>& impacts);
nlohmann::ordered_json rendered_to_json(const RenderedExplanation& r);
RenderedExplanation rendered_from_json(const nlohmann::json& j);  // throws ConfigError

}  // namespace xbo
