#include "xbo/llm_client.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>

#include "xbo/egg_model.hpp"
#include "xbo/render.hpp"

// After the project headers: <resolv.h> defines a `_res` macro that breaks Eigen.
#include <httplib.h>

namespace xbo {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// "yolk-to-white ratio (ywr)" -> "yolk-to-white ratio"
std::string base_name(std::string_view name) {
  std::string disp(name);
  if (auto p = param_from_key(name)) disp = std::string(info(*p).display);
  const auto paren = disp.find(" (");
  return paren == std::string::npos ? disp : disp.substr(0, paren);
}

std::vector<double> numbers_in(const std::string& text) {
  static const std::regex number_re(R"(\d+(?:\.\d+)?)");
  std::vector<double> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), number_re); it != std::sregex_iterator(); ++it) {
    out.push_back(std::stod(it->str()));
  }
  return out;
}

bool contains_number(const std::vector<double>& values, double v) {
  return std::any_of(values.begin(), values.end(), [v](double x) { return std::abs(x - v) <= 1e-12 * std::max(1.0, std::abs(v)); });
}

}  // namespace

nlohmann::ordered_json llm_facts(const TuneDecision& d) {
  nlohmann::ordered_json tune = nlohmann::ordered_json::array();
  nlohmann::ordered_json keep = nlohmann::ordered_json::array();
  for (const auto& e : d.entries) {
    const auto p = param_from_key(e.name);
    const std::string name = p ? std::string(info(*p).display) : e.name;
    if (e.tune) {
      const Interval r = displayed_range(e.name, e.range);
      const int prec = precision_for(e.name);
      tune.push_back({{"name", name}, {"range", {format_number(r.lower, prec), format_number(r.upper, prec)}}});
    } else {
      keep.push_back(name);
    }
  }
  return {{"tune", std::move(tune)}, {"do_not_tune", std::move(keep)}};
}

std::string llm_prompt(const TuneDecision& d) {
  std::string out =
      "Based on the provided tuning recommendations, generate a textual explanation in natural language:\n"
      "1. Clearly identify the parameters that should not be tuned (stated as \"maintain stability\").\n"
      "2. Highlight the parameters that should be fine-tuned, specifying the recommended ranges.\n"
      "3. Use clear and concise language for readability.\n"
      "Use every number exactly as given and do not add any other numbers.\n";
  const auto facts = llm_facts(d);
  out += "Tune:\n";
  for (const auto& t : facts["tune"]) {
    out += "- " + t["name"].get<std::string>() + ": [" + t["range"][0].get<std::string>() + ", " +
           t["range"][1].get<std::string>() + "]\n";
  }
  out += "Do not tune:\n";
  for (const auto& n : facts["do_not_tune"]) out += "- " + n.get<std::string>() + "\n";
  return out;
}

std::optional<std::string> validate_rewrite(const std::string& template_text, const std::string& reply,
                                            const TuneDecision& d) {
  if (reply.empty()) return "empty reply";
  const std::string folded = lower(reply);
  for (const auto& e : d.entries) {
    const std::string name = base_name(e.name);
    if (folded.find(lower(name)) == std::string::npos) return "reply does not mention " + name;
  }
  const auto expected = numbers_in(template_text);
  const auto got = numbers_in(reply);
  for (double v : expected) {
    if (!contains_number(got, v)) return "reply is missing the value " + format_number(v, 6);
  }
  for (double v : got) {
    if (!contains_number(expected, v)) return "reply introduces the value " + format_number(v, 6);
  }
  return std::nullopt;
}

RewriteResult llm_rewrite(const std::string& template_text, const TuneDecision& d, const LlmConfig& config) {
  RewriteResult fallback{template_text, true, ""};
  if (config.endpoint.empty()) {
    fallback.reason = "no text-generation endpoint configured";
    return fallback;
  }
  const auto scheme = config.endpoint.find("://");
  const auto path_at = config.endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  const std::string base = path_at == std::string::npos ? config.endpoint : config.endpoint.substr(0, path_at);
  const std::string path = path_at == std::string::npos ? "/" : config.endpoint.substr(path_at);

  httplib::Client client(base);
  if (!client.is_valid()) {
    fallback.reason = "unsupported endpoint " + config.endpoint;
    return fallback;
  }
  const auto secs = static_cast<time_t>(config.timeout_s);
  const auto usecs = static_cast<time_t>((config.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!config.key.empty()) headers.emplace("Authorization", "Bearer " + config.key);
  const nlohmann::ordered_json body{{"prompt", llm_prompt(d)}, {"facts", llm_facts(d)}};
  const auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    fallback.reason = "request failed: " + httplib::to_string(res.error());
    return fallback;
  }
  if (res->status != 200) {
    fallback.reason = "service returned HTTP " + std::to_string(res->status);
    return fallback;
  }
  std::string text;
  try {
    text = nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const std::exception&) {
    fallback.reason = "malformed service reply";
    return fallback;
  }
  if (auto why = validate_rewrite(template_text, text, d)) {
    fallback.reason = *why;
    return fallback;
  }
  return {text, false, ""};
}

}  // namespace xbo
