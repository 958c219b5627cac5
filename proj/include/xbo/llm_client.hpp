#pragma once

// Optional rewrite of the templated language explanation by an external
// text-generation service. Replies are accepted only when they state exactly the
// facts of the template; anything else falls back to the template text.

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "xbo/tntrules.hpp"

namespace xbo {

struct LlmConfig {
  std::string endpoint;  // http://host:port/path
  std::string key;
  double timeout_s = 10.0;
};

struct RewriteResult {
  std::string text;
  bool fallback = false;
  std::string reason;  // why the template was used
};

std::string llm_prompt(const TuneDecision& d);
nlohmann::ordered_json llm_facts(const TuneDecision& d);

/// Empty when `reply` names every parameter of the decision, contains every number
/// of `template_text` and no other number; otherwise the reason for rejection.
std::optional<std::string> validate_rewrite(const std::string& template_text, const std::string& reply,
                                            const TuneDecision& d);

RewriteResult llm_rewrite(const std::string& template_text, const TuneDecision& d, const LlmConfig& config);

}  // namespace xbo
