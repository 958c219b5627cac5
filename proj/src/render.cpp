#include "xbo/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

#include "xbo/egg_model.hpp"
#include "xbo/errors.hpp"

namespace xbo {

namespace {

constexpr std::string_view kRulesPrefix = "No tune: ";
constexpr std::string_view kRulesTune = ", Tune: ";
constexpr std::string_view kPredicted = "Predicted objective: ";
constexpr std::string_view kEmptyList = "—";
constexpr std::string_view kElementOf = " ∈ ";
constexpr std::string_view kMaintain = "Maintain stability for ";
constexpr std::string_view kFineTune = "Fine-tune ";
constexpr std::string_view kOptimal = " for optimal performance.";
constexpr std::string_view kNothingToTune = "No parameter needs fine-tuning.";

std::string symbol_for(std::string_view name) {
  if (auto p = param_from_key(name)) return std::string(info(*p).symbol);
  return std::string(name);
}

std::string display_for(std::string_view name) {
  if (auto p = param_from_key(name)) return std::string(info(*p).display);
  return std::string(name);
}

std::string key_for_symbol(std::string_view symbol) {
  for (const auto& i : kParamInfo) {
    if (i.symbol == symbol) return std::string(i.key);
  }
  return std::string(symbol);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

// "a", "a, and b", "a, b, and c"
std::string join_with_and(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += (i + 1 == items.size()) ? ", and " : ", ";
    out += items[i];
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

// Orders entries by egg-parameter position when every name is a known key.
void canonical_order(TuneDecision& d) {
  const bool all_known = std::all_of(d.entries.begin(), d.entries.end(),
                                     [](const TuneEntry& e) { return param_from_key(e.name).has_value(); });
  if (!all_known) return;
  std::stable_sort(d.entries.begin(), d.entries.end(), [](const TuneEntry& a, const TuneEntry& b) {
    return index(*param_from_key(a.name)) < index(*param_from_key(b.name));
  });
}

std::string range_text(std::string_view name, Interval r, std::string_view open, std::string_view mid,
                       std::string_view close) {
  const int prec = precision_for(name);
  const Interval shown = displayed_range(name, r);
  std::string out(open);
  out += format_number(shown.lower, prec);
  out += mid;
  out += format_number(shown.upper, prec);
  out += close;
  return out;
}

}  // namespace

std::string to_string(ExplanationFormat f) {
  switch (f) {
    case ExplanationFormat::None: return "none";
    case ExplanationFormat::Rules: return "rules";
    case ExplanationFormat::Visual: return "visual";
    case ExplanationFormat::Language: return "language";
  }
  return "none";
}

ExplanationFormat format_from_string(std::string_view s) {
  for (auto f : {ExplanationFormat::None, ExplanationFormat::Rules, ExplanationFormat::Visual,
                 ExplanationFormat::Language}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown explanation format '" + std::string(s) + "'");
}

std::string format_number(double value, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, value);
  std::string s(buf);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

int precision_for(std::string_view name) {
  if (auto p = param_from_key(name)) return info(*p).precision;
  return 3;
}

namespace {
Interval round_outward(Interval r, int precision) {
  const double scale = std::pow(10.0, precision);
  constexpr double kSlack = 1e-9;
  return {std::floor(r.lower * scale + kSlack) / scale, std::ceil(r.upper * scale - kSlack) / scale};
}
}  // namespace

Interval displayed_range(std::string_view name, Interval range) {
  Interval out = round_outward(range, precision_for(name));
  if (auto p = param_from_key(name)) {
    out.lower = std::max(out.lower, info(*p).lower);
    out.upper = std::min(out.upper, info(*p).upper);
  }
  return out;
}

Interval displayed_objective(Interval predicted) { return round_outward(predicted, kObjectivePrecision); }

std::string render_rules(const TuneDecision& d) {
  std::vector<std::string> no_tune;
  std::vector<std::string> tune;
  for (const auto& e : d.entries) {
    const std::string sym = symbol_for(e.name);
    if (e.tune) {
      tune.push_back(sym + range_text(e.name, e.range, std::string(kElementOf) + "[", ", ", "]"));
    } else {
      no_tune.push_back(sym);
    }
  }
  const Interval pred = displayed_objective(d.predicted);
  std::string out(kRulesPrefix);
  out += no_tune.empty() ? std::string(kEmptyList) : join(no_tune, ", ");
  out += kRulesTune;
  out += tune.empty() ? std::string(kEmptyList) : join(tune, ", ");
  out += "\n";
  out += kPredicted;
  out += "[" + format_number(pred.lower, kObjectivePrecision) + ", " +
         format_number(pred.upper, kObjectivePrecision) + "]";
  return out;
}

VisualSpec render_visual(const TuneDecision& d, const std::vector<double>& impacts) {
  if (impacts.size() != d.entries.size()) throw UsageError("impacts must align with the decision entries");
  double max_impact = 0.0;
  for (std::size_t i = 0; i < impacts.size(); ++i) {
    if (d.entries[i].tune) max_impact = std::max(max_impact, impacts[i]);
  }
  VisualSpec v;
  v.axis_label = "Expected worsening if left untuned";
  for (std::size_t i = 0; i < d.entries.size(); ++i) {
    const auto& e = d.entries[i];
    VisualBar bar;
    bar.name = display_for(e.name);
    bar.key = e.name;
    bar.tune = e.tune;
    if (e.tune) {
      bar.range = displayed_range(e.name, e.range);
      bar.signed_length = max_impact > 0.0 ? -std::max(0.0, impacts[i]) / max_impact : kNoTuneBarLength;
    } else {
      bar.signed_length = kNoTuneBarLength;
    }
    v.bars.push_back(std::move(bar));
  }
  return v;
}

nlohmann::ordered_json visual_to_json(const VisualSpec& v) {
  auto bars = nlohmann::ordered_json::array();
  for (const auto& b : v.bars) {
    nlohmann::ordered_json j;
    j["name"] = b.name;
    j["key"] = b.key;
    j["signed_length"] = b.signed_length;
    j["tune_class"] = b.tune ? "Tune" : "NoTune";
    if (b.range) j["range"] = {b.range->lower, b.range->upper};
    bars.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["bars"] = std::move(bars);
  out["axis_label"] = v.axis_label;
  return out;
}

VisualSpec visual_from_json(const nlohmann::json& j) {
  VisualSpec v;
  try {
    v.axis_label = j.at("axis_label").get<std::string>();
    for (const auto& b : j.at("bars")) {
      VisualBar bar;
      bar.name = b.at("name").get<std::string>();
      bar.key = b.value("key", bar.name);
      bar.signed_length = b.at("signed_length").get<double>();
      const auto cls = b.at("tune_class").get<std::string>();
      if (cls != "Tune" && cls != "NoTune") throw ConfigError("unknown tune_class '" + cls + "'");
      bar.tune = cls == "Tune";
      if (b.contains("range")) bar.range = Interval{b["range"].at(0).get<double>(), b["range"].at(1).get<double>()};
      v.bars.push_back(std::move(bar));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed visual specification: ") + e.what());
  }
  return v;
}

std::string render_language(const TuneDecision& d) {
  struct Item {
    std::string sort_key;
    std::string text;
  };
  std::vector<Item> keep;
  std::vector<Item> tune;
  for (const auto& e : d.entries) {
    const std::string disp = display_for(e.name);
    if (e.tune) {
      tune.push_back({lower(disp), disp + range_text(e.name, e.range, " between ", " and ", "")});
    } else {
      keep.push_back({lower(disp), disp});
    }
  }
  auto texts = [](std::vector<Item>& items) {
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.sort_key < b.sort_key; });
    std::vector<std::string> out;
    for (auto& i : items) out.push_back(i.text);
    return out;
  };
  std::string out;
  if (!keep.empty()) {
    out += kMaintain;
    out += join_with_and(texts(keep));
    out += ".";
  }
  if (!out.empty()) out += " ";
  if (tune.empty()) {
    out += kNothingToTune;
  } else {
    out += kFineTune;
    out += join_with_and(texts(tune));
    out += kOptimal;
  }
  return out;
}

TuneDecision parse_rules(std::string_view text) {
  const std::string s(text);
  const auto nl = s.find('\n');
  const std::string first = s.substr(0, nl);
  if (first.rfind(kRulesPrefix, 0) != 0) throw ConfigError("rule text must start with 'No tune:'");
  const auto split = first.find(kRulesTune);
  if (split == std::string::npos) throw ConfigError("rule text has no 'Tune:' part");

  TuneDecision d;
  const std::string keep = trim(first.substr(kRulesPrefix.size(), split - kRulesPrefix.size()));
  if (keep != kEmptyList) {
    std::stringstream ss(keep);
    std::string item;
    while (std::getline(ss, item, ',')) {
      TuneEntry e;
      e.name = key_for_symbol(trim(item));
      d.entries.push_back(std::move(e));
    }
  }
  const std::string tune = trim(first.substr(split + kRulesTune.size()));
  if (tune != kEmptyList) {
    static const std::regex item_re(R"(\s*([^,\s]+) ∈ \[([^,\]]+), ([^\]]+)\](,|$))");
    auto it = tune.cbegin();
    std::smatch m;
    while (it != tune.cend()) {
      if (!std::regex_search(it, tune.cend(), m, item_re, std::regex_constants::match_continuous)) {
        throw ConfigError("malformed Tune list: '" + tune + "'");
      }
      TuneEntry e;
      e.name = key_for_symbol(m[1].str());
      e.tune = true;
      e.range = {parse_number(m[2].str()), parse_number(m[3].str())};
      d.entries.push_back(std::move(e));
      it = m[0].second;
    }
  }
  if (nl != std::string::npos) {
    static const std::regex pred_re(R"(Predicted objective: \[([^,\]]+), ([^\]]+)\]\s*)");
    std::smatch m;
    const std::string second = s.substr(nl + 1);
    if (!std::regex_match(second, m, pred_re)) throw ConfigError("malformed predicted-objective line");
    d.predicted = {parse_number(m[1].str()), parse_number(m[2].str())};
  }
  canonical_order(d);
  return d;
}

TuneDecision parse_language(std::string_view text) {
  const std::string s(text);
  TuneDecision d;
  const auto tune_at = s.find(kFineTune);
  for (const auto& pi : kParamInfo) {
    const auto pos = s.find(pi.display);
    if (pos == std::string::npos) continue;
    TuneEntry e;
    e.name = std::string(pi.key);
    if (tune_at != std::string::npos && pos > tune_at) {
      static const std::regex between_re(R"(^ between (-?[0-9.]+) and (-?[0-9.]+))");
      std::smatch m;
      const std::string rest = s.substr(pos + pi.display.size());
      if (!std::regex_search(rest, m, between_re)) {
        throw ConfigError("no range after '" + std::string(pi.display) + "'");
      }
      e.tune = true;
      e.range = {parse_number(m[1].str()), parse_number(m[2].str())};
    }
    d.entries.push_back(std::move(e));
  }
  if (d.entries.empty()) throw ConfigError("no parameter names found in explanation text");
  return d;
}

TuneDecision decision_from_visual(const VisualSpec& v) {
  TuneDecision d;
  for (const auto& b : v.bars) {
    TuneEntry e;
    e.name = b.key;
    e.tune = b.tune;
    if (b.tune && b.range) e.range = *b.range;
    d.entries.push_back(std::move(e));
  }
  return d;
}

RenderedExplanation render(ExplanationFormat format, const TuneDecision& d, const std::vector<double>& impacts) {
  RenderedExplanation r;
  r.format = format;
  switch (format) {
    case ExplanationFormat::None: break;
    case ExplanationFormat::Rules: r.text = render_rules(d); break;
    case ExplanationFormat::Language: r.text = render_language(d); break;
    case ExplanationFormat::Visual: r.visual = render_visual(d, impacts); break;
  }
  return r;
}

nlohmann::ordered_json rendered_to_json(const RenderedExplanation& r) {
  nlohmann::ordered_json j;
  j["format"] = to_string(r.format);
  if (r.visual) {
    j["payload"] = visual_to_json(*r.visual);
  } else if (r.format == ExplanationFormat::None) {
    j["payload"] = nullptr;
  } else {
    j["payload"] = r.text;
  }
  return j;
}

RenderedExplanation rendered_from_json(const nlohmann::json& j) {
  RenderedExplanation r;
  try {
    r.format = format_from_string(j.at("format").get<std::string>());
    const auto& payload = j.at("payload");
    if (r.format == ExplanationFormat::Visual) {
      r.visual = visual_from_json(payload);
    } else if (r.format != ExplanationFormat::None) {
      r.text = payload.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed explanation: ") + e.what());
  }
  return r;
}

}  // namespace xbo
