#include "xbo/cli.hpp"

#include <pthread.h>

#include <cctype>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xbo/bo.hpp"
#include "xbo/egg_model.hpp"
#include "xbo/errors.hpp"
#include "xbo/harness.hpp"
#include "xbo/render.hpp"
#include "xbo/scenario.hpp"
#include "xbo/service.hpp"
#include "xbo/tntrules.hpp"

namespace xbo {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitError = 2;
constexpr std::size_t kMinObservations = 5;

// A hen's egg cooked to the middle of the Perfect band.
constexpr EggParameters kDefaultEgg{50.0, 27.0, 0.9, 12.0, 63.0, 5.0};

std::string grade_label(FeedbackGrade g) {
  std::string s(to_string(g));
  for (char& c : s) {
    if (c == '_') c = ' ';
  }
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

void add_egg_flags(CLI::App* cmd, EggParameters& p) {
  cmd->add_option("--mass", p.mass_g, "Egg mass in g")->capture_default_str();
  cmd->add_option("--lambda", p.lambda, "Thermal conductivity coefficient")->capture_default_str();
  cmd->add_option("--ywr", p.ywr, "Yolk-to-white ratio")->capture_default_str();
  cmd->add_option("--t-egg", p.t_egg_c, "Initial egg temperature in °C")->capture_default_str();
  cmd->add_option("--t-yolk", p.t_yolk_c, "Target yolk temperature in °C")->capture_default_str();
  cmd->add_option("--altitude", p.altitude_m, "Altitude in m")->capture_default_str();
}

struct Seeds {
  std::uint64_t first = 0;
  std::uint64_t last = 0;
};

Seeds parse_seeds(const std::string& s) {
  const auto dots = s.find("..");
  try {
    std::size_t used = 0;
    if (dots == std::string::npos) {
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return {v, v};
    }
    const std::string a = s.substr(0, dots);
    const std::string b = s.substr(dots + 2);
    const auto first = std::stoull(a, &used);
    if (used != a.size()) throw std::invalid_argument(s);
    const auto last = std::stoull(b, &used);
    if (used != b.size()) throw std::invalid_argument(s);
    if (last < first) throw std::invalid_argument(s);
    return {first, last};
  } catch (const std::logic_error&) {
    throw UsageError("--seeds expects N or A..B with A <= B, got '" + s + "'");
  }
}

std::string csv_rate(std::size_t num, std::size_t den) { return den ? fixed(double(num) / double(den), 4) : ""; }

struct Tally {
  std::size_t training_eggs = 0, training_ok = 0;
  std::size_t baseline_eggs = 0, baseline_ok = 0, baseline_trials = 0;
  std::size_t treatment_eggs = 0, treatment_ok = 0, treatment_trials = 0;
  std::size_t adherent = 0;

  void add(const SessionMetrics& m) {
    for (const auto& e : m.eggs) {
      const bool ok = e.outcome == EggOutcome::Success;
      switch (e.block) {
        case Block::Training:
          ++training_eggs;
          training_ok += ok;
          break;
        case Block::Baseline:
          ++baseline_eggs;
          baseline_ok += ok;
          if (ok) baseline_trials += *e.trials_to_success;
          break;
        case Block::Treatment:
          ++treatment_eggs;
          treatment_ok += ok;
          if (ok) {
            treatment_trials += *e.trials_to_success;
            adherent += e.adherent;
          }
          break;
      }
    }
  }

  std::string row(const std::string& seed, const std::string& policy, const std::string& condition) const {
    return seed + "," + policy + "," + condition + "," + csv_rate(training_ok, training_eggs) + "," +
           csv_rate(baseline_ok, baseline_eggs) + "," + csv_rate(treatment_ok, treatment_eggs) + "," +
           csv_rate(baseline_trials, baseline_ok) + "," + csv_rate(treatment_trials, treatment_ok) + "," +
           csv_rate(adherent, treatment_ok);
  }
};

constexpr const char* kCsvHeader =
    "seed,policy,condition,training_success_rate,baseline_success_rate,treatment_success_rate,"
    "baseline_mean_trials_to_success,treatment_mean_trials_to_success,treatment_adherence";

int cmd_cook(const EggParameters& p, std::ostream& out) {
  // Cookability first: a yolk target above the boiling point is the more useful message.
  const double t = cooking_time_s(p);
  validate_bounds(p);
  const FeedbackGrade g = classify_feedback(t);
  out << fixed(t, 1) << " s, " << grade_label(g) << '\n';
  return g == FeedbackGrade::Perfect ? kExitOk : kExitFail;
}

struct ExplainArgs {
  std::string scenario;
  std::string observations;
  std::string scenarios = XBO_DEFAULT_SCENARIOS;
  std::string config;
  std::string format = "rules";
  std::string trace_out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_e;
  std::optional<double> t_s;
  std::optional<double> t_alpha;
  std::size_t budget = 30;
};

int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  if (a.scenario.empty() && a.observations.empty()) throw UsageError("explain needs --scenario or --observations");
  ServiceConfig defaults;
  if (!a.config.empty()) apply_config_file(defaults, a.config);
  ExplainConfig cfg = defaults.explainer;
  if (a.seed) cfg.seed = *a.seed;
  if (a.n_e) cfg.n_e = *a.n_e;
  if (a.t_s) cfg.t_s = *a.t_s;
  if (a.t_alpha) cfg.t_alpha = *a.t_alpha;
  const bool as_json = a.format == "json";
  const ExplanationFormat format = as_json ? ExplanationFormat::Rules : format_from_string(a.format);
  if (format == ExplanationFormat::None) throw UsageError("--format must be rules, visual, language or json");

  SearchSpace space = SearchSpace::egg_default();
  if (!a.scenario.empty()) {
    const Harness h(load_scenarios(a.scenarios));
    space = h.scenario(a.scenario).space();
  }

  BoState state = make_state(space, cfg.seed);
  if (!a.observations.empty()) {
    std::ifstream in(a.observations);
    if (!in) throw LoadError("cannot open observations '" + a.observations + "'");
    for (const auto& o : read_trace_jsonl(in, space)) {
      if (!space.feasible(o.x)) throw LoadError("observation outside the search space");
      state.observations.push_back(o);
    }
  } else {
    if (a.budget < kMinObservations) {
      throw UsageError("--budget must be at least " + std::to_string(kMinObservations));
    }
    auto run = run_egg([](const EggParameters& p) { return cooking_loss(p); }, space, a.budget, cfg.seed);
    if (!a.trace_out.empty()) {
      std::ofstream trace(a.trace_out);
      if (!trace) throw LoadError("cannot write trace '" + a.trace_out + "'");
      write_trace_jsonl(trace, run.raw.trace, space);
    }
    state = std::move(run.raw.state);
  }
  std::size_t succeeded = 0;
  for (const auto& o : state.observations) succeeded += !o.failed;
  if (succeeded < kMinObservations) {
    throw UsageError("only " + std::to_string(succeeded) + " usable observations; at least " +
                     std::to_string(kMinObservations) + " are needed. Run BO first, e.g. xbo explain --scenario chicken");
  }
  std::vector<Point> xs;
  for (const auto& o : state.observations) xs.push_back(o.x);
  const auto ys = state.training_targets();
  const GpModel model = fit(xs, ys, space.bounds(), state.fit_options);
  const Point rec = state.observations[*state.incumbent()].x;

  const Explanation e = explain(model, space, rec, cfg);
  if (as_json) {
    nlohmann::ordered_json j;
    j["recommendation"] = parameters_to_json(to_egg(rec));
    j["rules"] = rules_to_json(e.rules, space);
    j["applied_rule"] = rules_to_json({e.applied}, space).at(0);
    j["decision"] = decision_to_json(e.decision);
    j["fallback"] = e.fallback;
    j["t_s"] = e.t_s;
    j["clusters"] = e.cluster_count;
    out << j.dump(2) << '\n';
    return kExitOk;
  }
  const RenderedExplanation r = render(format, e.decision, e.impacts);
  if (r.visual) {
    out << visual_to_json(*r.visual).dump(2) << '\n';
  } else {
    out << r.text << '\n';
  }
  return kExitOk;
}

int cmd_simulate(const std::string& policy_name, const std::string& seeds_arg, const std::string& condition_name,
                 const std::string& scenarios, std::ostream& out) {
  const PolicyKind policy = policy_from_string(policy_name);
  Condition condition;
  try {
    condition = condition_from_string(condition_name);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const Seeds seeds = parse_seeds(seeds_arg);
  const Harness h(load_scenarios(scenarios));
  out << kCsvHeader << '\n';
  Tally all;
  for (std::uint64_t seed = seeds.first;; ++seed) {
    const AgentRun run = run_agent(h, policy, condition, seed);
    Tally one;
    one.add(run.metrics);
    all.add(run.metrics);
    out << one.row(std::to_string(seed), policy_name, condition_name) << '\n';
    if (seed == seeds.last) break;
  }
  if (seeds.last > seeds.first) out << all.row("all", policy_name, condition_name) << '\n';
  return kExitOk;
}

int cmd_sensitivity(const EggParameters& base, double fraction, bool as_json, std::ostream& out) {
  if (!(fraction > 0.0)) throw UsageError("--fraction must be > 0");
  validate_bounds(base);
  const SensitivityReport report = sensitivity_analysis(base, fraction);
  if (as_json) {
    auto j = nlohmann::ordered_json::array();
    for (const auto& e : report.entries) {
      nlohmann::ordered_json row;
      row["parameter"] = std::string(info(e.param).key);
      row["symbol"] = std::string(info(e.param).symbol);
      if (e.effect) row["effect"] = *e.effect;
      else row["effect"] = nullptr;
      j.push_back(std::move(row));
    }
    out << j.dump(2) << '\n';
    return kExitOk;
  }
  out << std::left << std::setw(6) << "rank" << std::setw(12) << "parameter" << "relative effect\n";
  std::size_t rank = 1;
  for (const auto& e : report.entries) {
    out << std::left << std::setw(6) << rank++ << std::setw(12) << info(e.param).key
        << (e.effect ? fixed(*e.effect, 6) : std::string("n/a")) << '\n';
  }
  return kExitOk;
}

int cmd_validate(const std::string& path, std::ostream& out, std::ostream& err) {
  try {
    const auto scenarios = load_scenarios(path);
    for (const auto& s : scenarios) {
      const double t = cooking_time_s(s.recommended);
      out << std::left << std::setw(10) << s.id << std::setw(10) << s.egg_type
          << (s.is_training ? "training  " : "          ") << "recommended " << fixed(t, 1) << " s, "
          << grade_label(classify_feedback(t)) << '\n';
    }
    out << "ok: " << scenarios.size() << " scenarios\n";
    return kExitOk;
  } catch (const LoadError& e) {
    err << "invalid scenario file: " << e.what() << '\n';
    return kExitFail;
  } catch (const UncookableError& e) {
    err << "invalid scenario file: " << e.what() << '\n';
    return kExitFail;
  }
}

struct ServeArgs {
  std::string config;
  std::string listen;
  std::string scenarios;
  std::string log_dir;
  std::string llm_endpoint;
  std::string llm_key;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  ServiceConfig cfg;
  apply_env(cfg, [](const char* k) { return std::getenv(k); });
  if (!a.listen.empty()) set_listen(cfg, a.listen);
  if (!a.scenarios.empty()) cfg.scenarios = a.scenarios;
  if (!a.log_dir.empty()) cfg.log_dir = a.log_dir;
  if (!a.llm_endpoint.empty() || !a.llm_key.empty()) {
    if (!cfg.llm) cfg.llm = LlmConfig{};
    if (!a.llm_endpoint.empty()) cfg.llm->endpoint = a.llm_endpoint;
    if (!a.llm_key.empty()) cfg.llm->key = a.llm_key;
  }
  if (!a.config.empty()) apply_config_file(cfg, a.config);

  // Signals are taken by a watcher thread so the server is stopped outside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Service service(cfg);
  const int port = service.bind();
  out << "listening on " << cfg.host << ":" << port << " (" << service.session_count()
      << " sessions recovered, logs in " << cfg.log_dir.string() << ")" << std::endl;
  std::thread watcher([&service, set] {
    int sig = 0;
    sigwait(&set, &sig);
    service.stop();
  });
  service.listen();
  watcher.join();
  out << "stopped" << std::endl;
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Explainable Bayesian optimisation workbench for the egg-cooking task", "xbo"};
  app.require_subcommand(1);

  EggParameters cook_egg = kDefaultEgg;
  auto* cook = app.add_subcommand("cook", "Cooking time and feedback grade for one parameter set");
  add_egg_flags(cook, cook_egg);

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "Run BO (or load observations) and explain the recommendation");
  explain_cmd->add_option("--scenario", ex.scenario, "Scenario id");
  explain_cmd->add_option("--observations", ex.observations, "JSON-lines observations {x:{...}, y}");
  explain_cmd->add_option("--scenarios", ex.scenarios, "Scenario file")->capture_default_str();
  explain_cmd->add_option("--config", ex.config, "JSON config file with explainer defaults");
  explain_cmd->add_option("--format", ex.format, "rules, visual, language or json")->capture_default_str();
  explain_cmd->add_option("--seed", ex.seed, "Seed for BO and the explanation sample");
  explain_cmd->add_option("--n-e", ex.n_e, "Explanation sample size");
  explain_cmd->add_option("--t-s", ex.t_s, "Variance threshold for cluster pruning");
  explain_cmd->add_option("--t-alpha", ex.t_alpha, "Interestingness threshold");
  explain_cmd->add_option("--budget", ex.budget, "BO evaluations")->capture_default_str();
  explain_cmd->add_option("--trace-out", ex.trace_out, "Write the BO trace as JSON lines");

  std::string policy;
  std::string seeds = "0..0";
  std::string condition = "rules";
  std::string sim_scenarios = XBO_DEFAULT_SCENARIOS;
  auto* simulate = app.add_subcommand("simulate", "Scripted agents over a seed range, CSV metrics");
  simulate->add_option("--policy", policy, "explanation-following, range-uniform, random or midpoint")->required();
  simulate->add_option("--seeds", seeds, "Seed or inclusive range A..B")->capture_default_str();
  simulate->add_option("--condition", condition, "visual, rules or language")->capture_default_str();
  simulate->add_option("--scenarios", sim_scenarios, "Scenario file")->capture_default_str();

  EggParameters sens_egg = kDefaultEgg;
  double fraction = 0.10;
  bool sens_json = false;
  std::string sens_scenario;
  std::string sens_scenarios = XBO_DEFAULT_SCENARIOS;
  auto* sensitivity = app.add_subcommand("sensitivity", "One-at-a-time sensitivity of the cooking time");
  add_egg_flags(sensitivity, sens_egg);
  sensitivity->add_option("--fraction", fraction, "Relative perturbation")->capture_default_str();
  sensitivity->add_flag("--json", sens_json, "Print JSON instead of a table");
  sensitivity->add_option("--scenario", sens_scenario, "Use a scenario's optimum as the base point");
  sensitivity->add_option("--scenarios", sens_scenarios, "Scenario file")->capture_default_str();

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
  serve->add_option("--config", sv.config, "JSON config file (overrides flags and environment)");
  serve->add_option("--listen", sv.listen, "host:port (default 127.0.0.1:8080)");
  serve->add_option("--scenarios", sv.scenarios, "Scenario file");
  serve->add_option("--log-dir", sv.log_dir, "Session log directory");
  serve->add_option("--llm-endpoint", sv.llm_endpoint, "Text-generation endpoint for language rewrites");
  serve->add_option("--llm-key", sv.llm_key, "Key for the text-generation endpoint");

  std::string validate_path;
  auto* validate = app.add_subcommand("scenarios-validate", "Check a scenario file");
  validate->add_option("file", validate_path, "Scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (*cook) return cmd_cook(cook_egg, out);
    if (*explain_cmd) return cmd_explain(ex, out);
    if (*simulate) return cmd_simulate(policy, seeds, condition, sim_scenarios, out);
    if (*sensitivity) {
      if (!sens_scenario.empty()) {
        const Harness h(load_scenarios(sens_scenarios));
        sens_egg = h.scenario(sens_scenario).optimal;
      }
      return cmd_sensitivity(sens_egg, fraction, sens_json, out);
    }
    if (*serve) return cmd_serve(sv, out);
    if (*validate) return cmd_validate(validate_path, out, err);
  } catch (const UncookableError& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const DomainError& e) {
    err << "error: out of bounds: " << e.what() << '\n';
    return kExitError;
  } catch (const ProtocolError& e) {
    err << "error: " << e.code() << ": " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace xbo
