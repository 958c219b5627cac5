// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gp_oracle_util.hpp"
#include "oracles.hpp"
#include "xbo/bo.hpp"
#include "xbo/egg_model.hpp"
#include "xbo/errors.hpp"
#include "xbo/gp.hpp"
#include "xbo/harness.hpp"
#include "xbo/random.hpp"
#include "xbo/render.hpp"
#include "xbo/scenario.hpp"
#include "xbo/session_log.hpp"
#include "xbo/tntrules.hpp"

namespace {

using namespace xbo;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed checks; the first few are reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (ok) return;
    if (failures_.size() < 3) failures_.push_back(what);
    ++failed_;
  }
  Outcome outcome(const std::string& summary) const {
    if (failed_ == 0) return {true, summary};
    std::string d = summary + "; " + std::to_string(failed_) + "/" + std::to_string(total_) + " checks failed:";
    for (const auto& f : failures_) d += " [" + f + "]";
    return {false, d};
  }

 private:
  std::size_t total_ = 0;
  std::size_t failed_ = 0;
  std::vector<std::string> failures_;
};

std::string num(double v, int digits = 6) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

const std::vector<Scenario>& scenarios() {
  static const std::vector<Scenario> s = load_scenarios(XBO_DEFAULT_SCENARIOS);
  return s;
}

double oracle_time(const EggParameters& p) {
  return oracle::cook_time(p.mass_g, p.lambda, p.ywr, p.t_egg_c, p.t_yolk_c, p.altitude_m);
}

Outcome boiling_anchor() {
  Checks c;
  const double b0 = boiling_point_c(0.0);
  const double b10 = boiling_point_c(10000.0);
  c.expect(std::abs(b0 - oracle::boiling_point(0.0)) <= 1e-12, "library vs scalar oracle at 0 m");
  c.expect(std::abs(b10 - oracle::boiling_point(10000.0)) <= 1e-12, "library vs scalar oracle at 10000 m");
  c.expect(std::abs(b0 - 100.0) <= 1e-3, "T(0) = " + num(b0, 8) + " not within 1e-3 of 100");
  c.expect(std::abs(b10 - 89.79) <= 0.05, "T(10000) = " + num(b10, 8) + " not within 0.05 of 89.79");
  return c.outcome("T(0) = " + num(b0, 8) + " C, T(10000) = " + num(b10, 8) + " C");
}

Outcome scenario_solvability() {
  Checks c;
  std::string times;
  for (const auto& s : scenarios()) {
    const double t = cooking_time_s(s.optimal);
    c.expect(std::abs(t - oracle_time(s.optimal)) <= 1e-9, s.id + " library vs oracle");
    c.expect(t >= 260.0 && t <= 285.0, s.id + " " + num(t) + " s outside [260, 285]");
    times += (times.empty() ? "" : ", ") + s.id + " " + num(t, 5);
  }
  const std::vector<std::pair<std::string, double>> anchors{{"chicken", 278.8}, {"duck", 275.8}, {"goose", 270.3}};
  for (const auto& [id, expected] : anchors) {
    const auto it = std::find_if(scenarios().begin(), scenarios().end(), [&](const Scenario& s) { return s.id == id; });
    c.expect(it != scenarios().end(), id + " missing");
    if (it == scenarios().end()) continue;
    const double t = oracle_time(it->optimal);
    c.expect(std::abs(t - expected) <= 0.5, id + " anchor " + num(t) + " vs " + num(expected));
  }
  return c.outcome(std::to_string(scenarios().size()) + " scenarios: " + times);
}

Outcome sensitivity_reproduction() {
  Checks c;
  int top_two = 0;
  std::string ranks;
  for (const auto& s : scenarios()) {
    const auto report = sensitivity_analysis(s.optimal, 0.10);
    std::set<Param> top;
    for (std::size_t i = 0; i < 2 && i < report.entries.size(); ++i) top.insert(report.entries[i].param);
    if (top.count(Param::Lambda) && top.count(Param::TYolk)) ++top_two;
    for (std::size_t i = 0; i < report.entries.size(); ++i) {
      const auto& e = report.entries[i];
      if (e.param == Param::Lambda) {
        c.expect(e.effect && std::abs(*e.effect - 0.10) <= 1e-12, s.id + " lambda effect not exactly 0.10");
        ranks += (ranks.empty() ? "" : ", ") + s.id + " lambda#" + std::to_string(i + 1);
      }
    }
    ranks += " top2={" + std::string(info(report.entries[0].param).key) + "," +
             std::string(info(report.entries[1].param).key) + "}";
  }
  c.expect(top_two >= 6, "lambda and t_yolk_c top two in " + std::to_string(top_two) + "/7 (need >= 6)");
  return c.outcome("lambda & t_yolk_c top two in " + std::to_string(top_two) + "/7; " + ranks);
}

Outcome gp_oracle() {
  Checks c;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(seed, 0xacce));
    const std::size_t d = 1 + rng.below(6);
    const std::size_t n = 2 + rng.below(19);
    std::vector<Interval> bounds;
    for (std::size_t j = 0; j < d; ++j) {
      const double lo = rng.uniform(-50, 50);
      bounds.push_back({lo, lo + rng.uniform(0.1, 200)});
    }
    std::vector<Point> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      Point p(d);
      double v = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        p[j] = rng.uniform(bounds[j].lower, bounds[j].upper);
        v += std::cos(4.0 * (p[j] - bounds[j].lower) / bounds[j].width());
      }
      x.push_back(p);
      y.push_back(10.0 * v + rng.uniform(-0.5, 0.5));
    }
    const GpModel m = fit(x, y, bounds);
    const auto g = oracle::from_model(m);
    const double dl = std::abs(log_marginal_likelihood(m) - g.lml());
    worst = std::max(worst, dl);
    c.expect(dl <= 1e-8, "instance " + std::to_string(seed) + " lml diff " + num(dl));
    for (int q = 0; q < 10; ++q) {
      Point p, u;
      for (const auto& b : bounds) {
        p.push_back(rng.uniform(b.lower, b.upper));
        u.push_back((p.back() - b.lower) / b.width());
      }
      const Posterior post = predict(m, {p}).front();
      const auto [mu, sd] = g.posterior(u);
      worst = std::max({worst, std::abs(post.mean - mu), std::abs(post.std - sd)});
      c.expect(std::abs(post.mean - mu) <= 1e-8, "instance " + std::to_string(seed) + " mean");
      c.expect(std::abs(post.std - sd) <= 1e-8, "instance " + std::to_string(seed) + " std");
    }
  }
  return c.outcome("50 instances, max abs diff " + num(worst, 3));
}

SearchSpace unit_space(std::size_t d) {
  SearchSpace s;
  for (std::size_t j = 0; j < d; ++j) s.dims.push_back({"x" + std::to_string(j), {0.0, 1.0}, std::nullopt});
  return s;
}

GpModel random_surface(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> x;
  std::vector<double> y;
  for (int i = 0; i < 20; ++i) {
    Point p(d);
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      p[j] = rng.uniform();
      v += (j + 1.0) * (p[j] - 0.3) * (p[j] - 0.3);
    }
    x.push_back(p);
    y.push_back(v);
  }
  return fit(x, y, std::vector<Interval>(d, Interval{0.0, 1.0}));
}

bool same_rules(const std::vector<Rule>& a, const std::vector<Rule>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows != b[i].rows || a[i].interestingness != b[i].interestingness) return false;
    for (std::size_t k = 0; k < a[i].antecedent.size(); ++k) {
      if (a[i].antecedent[k].lower != b[i].antecedent[k].lower || a[i].antecedent[k].upper != b[i].antecedent[k].upper)
        return false;
    }
  }
  return true;
}

Outcome tntrules_properties() {
  Checks c;
  std::size_t clusters_checked = 0, rules_checked = 0, bounds_checked = 0;

  // (a) pruned clusters respect t_s
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const std::size_t d = 2 + seed % 3;
    const auto data = generate_dataset(random_surface(d, seed), unit_space(d), 250, seed);
    const auto tree = cluster(data);
    for (double t_s : {1e-4, 1e-3, 1e-2, 1e-1}) {
      for (const auto& cl : variance_prune(tree, data, t_s).clusters) {
        ++clusters_checked;
        c.expect(mu_variance(data, cl) <= t_s, "(a) cluster variance above t_s");
      }
    }
  }

  // (b) confidence * coverage = support, (d) antecedent tightness
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(seed, 0xb0b));
    const std::size_t d = 1 + rng.below(4);
    const std::size_t n = 50 + rng.below(100);
    const auto data = generate_dataset(random_surface(d, 100 + seed), unit_space(d), n, seed);
    const auto tree = cluster(data);
    const double t_s = std::pow(10.0, rng.uniform(-4.0, -1.0));
    const auto rules = score_rules(construct_rules(data, variance_prune(tree, data, t_s)), data);
    const Rule& r = rules[rng.below(rules.size())];
    ++rules_checked;
    c.expect(std::abs(r.confidence * r.coverage - r.support) <= 1e-12, "(b) con*covr != supp");
    for (std::size_t k = 0; k < d; ++k) {
      for (int side = 0; side < 2; ++side) {
        Rule shrunk = r;
        Interval& iv = shrunk.antecedent[k];
        if (side == 0) iv.lower = std::nextafter(iv.lower, std::numeric_limits<double>::infinity());
        else iv.upper = std::nextafter(iv.upper, -std::numeric_limits<double>::infinity());
        std::size_t excluded = 0;
        for (std::size_t row : r.rows) excluded += !shrunk.covers(data.inputs[row]);
        ++bounds_checked;
        c.expect(excluded >= 1, "(d) shrinking a bound excluded no cluster row");
      }
    }
  }

  // (c) filter monotone over a 20-value sweep
  {
    const auto data = generate_dataset(random_surface(3, 7), unit_space(3), 300, 7);
    const auto rules = score_rules(construct_rules(data, variance_prune(cluster(data), data, 1e-3)), data);
    std::vector<Rule> prev = filter_rules(rules, 0.0);
    for (int i = 1; i < 20; ++i) {
      const auto cur = filter_rules(rules, i / 19.0);
      c.expect(cur.size() <= prev.size(), "(c) filter grew as t_alpha rose");
      for (const auto& r : cur) {
        const bool kept = std::any_of(prev.begin(), prev.end(), [&](const Rule& p) { return p.rows == r.rows; });
        c.expect(kept, "(c) rule appeared at a higher threshold");
      }
      prev = cur;
    }
  }

  // (e) full-pipeline determinism per seed
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SearchSpace space = std::find_if(scenarios().begin(), scenarios().end(), [](const Scenario& s) {
                                return s.id == "chicken";
                              })->space();
    const auto objective = [](const EggParameters& p) { return cooking_loss(p); };
    const auto a = run_egg(objective, space, 30, seed);
    const auto b = run_egg(objective, space, 30, seed);
    c.expect(a.best.values == b.best.values, "(e) BO not deterministic");
    ExplainConfig cfg;
    cfg.seed = seed;
    const Explanation ea = explain(*a.raw.state.model, space, to_point(a.best.values), cfg);
    const Explanation eb = explain(*b.raw.state.model, space, to_point(b.best.values), cfg);
    c.expect(same_rules(ea.rules, eb.rules), "(e) rule sets differ");
    c.expect(render_rules(ea.decision) == render_rules(eb.decision), "(e) decisions differ");
    c.expect(decision_to_json(ea.decision) == decision_to_json(eb.decision), "(e) decision json differs");
  }

  return c.outcome("(a) " + std::to_string(clusters_checked) + " clusters, (b)(d) " + std::to_string(rules_checked) +
                   " rule/dataset pairs and " + std::to_string(bounds_checked) +
                   " bounds, (c) 20-step sweep, (e) 3 seeds");
}

Outcome bo_convergence() {
  const auto& chicken = *std::find_if(scenarios().begin(), scenarios().end(), [](const Scenario& s) {
    return s.id == "chicken";
  });
  const SearchSpace space = chicken.space();
  int perfect = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto r = run_egg([](const EggParameters& p) { return cooking_loss(p); }, space, 30, seed);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.raw.trace) {
      if (!e.failed) best = std::min(best, e.y);
    }
    worst = std::max(worst, best);
    perfect += best <= 12.5;
  }
  Checks c;
  c.expect(perfect >= 90, std::to_string(perfect) + "/100 reached the Perfect band");
  return c.outcome(std::to_string(perfect) + "/100 seeds reach the Perfect band (worst best-loss " + num(worst, 4) + " s)");
}

Outcome agent_analogue() {
  const Harness h(scenarios());
  const auto tally = [&](PolicyKind k) {
    std::size_t eggs = 0, ok = 0, retries = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const auto run = run_agent(h, k, Condition::Rules, seed);
      for (const auto& e : run.metrics.eggs) {
        if (e.block != Block::Treatment) continue;
        ++eggs;
        if (e.outcome == EggOutcome::Success) {
          ++ok;
          retries += *e.trials_to_success;
        }
      }
    }
    const double rate = double(ok) / double(eggs);
    const double mean = ok ? double(retries) / double(ok) : std::numeric_limits<double>::infinity();
    return std::pair{rate, mean};
  };
  const auto [follow_rate, follow_mean] = tally(PolicyKind::ExplanationFollowing);
  const auto [uniform_rate, uniform_mean] = tally(PolicyKind::RangeUniform);
  Checks c;
  c.expect(follow_rate > uniform_rate, "success rate not higher");
  c.expect(follow_mean < uniform_mean, "mean trials-to-success not lower");
  return c.outcome("treatment success " + num(follow_rate, 4) + " vs " + num(uniform_rate, 4) +
                   ", mean trials-to-success " + num(follow_mean, 4) + " vs " + num(uniform_mean, 4));
}

TuneDecision decision_with(const std::vector<std::pair<Param, Interval>>& tune, Interval predicted) {
  TuneDecision d;
  for (Param p : kAllParams) {
    TuneEntry e;
    e.name = std::string(info(p).key);
    for (const auto& [q, r] : tune) {
      if (q == p) {
        e.tune = true;
        e.range = r;
      }
    }
    d.entries.push_back(e);
  }
  d.predicted = predicted;
  return d;
}

bool same_partition(const TuneDecision& a, const TuneDecision& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& x = a.entries[i];
    const auto& y = b.entries[i];
    if (x.name != y.name || x.tune != y.tune) return false;
    if (x.tune && (x.range.lower != y.range.lower || x.range.upper != y.range.upper)) return false;
  }
  return true;
}

Outcome rendering() {
  Checks c;
  const TuneDecision example = decision_with({{Param::Mass, {70, 74}}, {Param::Ywr, {0.6, 0.9}}}, {0.0, 12.5});
  const std::string language =
      "Maintain stability for altitude (A), egg temperature (Tegg), lambda (λ), and yolk temperature (Tyolk). "
      "Fine-tune Mass (M) between 70 and 74, and yolk-to-white ratio (ywr) between 0.6 and 0.9 for optimal "
      "performance.";
  c.expect(render_language(example) == language, "language output differs from the worked example");
  const std::string rules = render_rules(example);
  c.expect(rules == "No tune: λ, T_egg, T_yolk, A, Tune: M ∈ [70, 74], ywr ∈ [0.6, 0.9]\nPredicted objective: [0, 12.5]",
           "rules shape: " + rules);

  Rng rng(2024);
  for (int i = 0; i < 100; ++i) {
    std::vector<std::pair<Param, Interval>> tune;
    std::vector<double> impacts;
    for (Param p : kAllParams) {
      const bool t = rng.uniform() < 0.5;
      impacts.push_back(t ? rng.uniform(0.1, 5.0) : 0.0);
      if (!t) continue;
      const double scale = std::pow(10.0, info(p).precision);
      double a = std::round(rng.uniform(info(p).lower, info(p).upper) * scale) / scale;
      double b = std::round(rng.uniform(info(p).lower, info(p).upper) * scale) / scale;
      if (a > b) std::swap(a, b);
      tune.push_back({p, {a, b}});
    }
    const auto d = decision_with(tune, {std::round(rng.uniform(0, 20) * 10) / 10, std::round(rng.uniform(20, 60) * 10) / 10});
    c.expect(same_partition(d, parse_rules(render_rules(d))), "rules round trip " + std::to_string(i));
    c.expect(same_partition(d, parse_language(render_language(d))), "language round trip " + std::to_string(i));
    c.expect(same_partition(d, decision_from_visual(visual_from_json(visual_to_json(render_visual(d, impacts))))),
             "visual round trip " + std::to_string(i));
  }
  return c.outcome("worked example byte-equal, rules shape matches, 100 random decisions round-trip in 3 formats");
}

std::string protocol_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const ProtocolError& e) {
    return e.code();
  }
  return "";
}

Outcome harness_protocol() {
  Checks c;
  const Harness h(scenarios());
  std::size_t sessions = 0, trials = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const Condition cond = static_cast<Condition>(seed % 3);
    const PolicyKind policy = static_cast<PolicyKind>(seed % 4);
    auto run = run_agent(h, policy, cond, seed);
    Session& s = run.session;
    ++sessions;

    std::set<std::string> ids;
    for (const auto& egg : s.eggs) ids.insert(egg.scenario_id);
    c.expect(ids.size() == s.eggs.size() && s.eggs.size() == scenarios().size(), "eggs repeat or are missing");
    c.expect(s.eggs.front().scenario_id == "chicken", "training egg is not first");

    for (const auto& egg : s.eggs) {
      const Scenario& sc = h.scenario(egg.scenario_id);
      c.expect(egg.trials.size() <= kMaxTrials, "more than five trials");
      for (const auto& t : egg.trials) {
        ++trials;
        c.expect(t.submitted != sc.recommended, "trial without adjustment accepted");
        for (Param p : kAllParams) {
          if (sc.is_fixed(p)) c.expect(t.submitted[p] == *sc.fixed[index(p)], "fixed parameter changed");
        }
      }
      // Whatever state the egg is in, a sixth trial or a change of fixed value is refused.
      Session probe = s;
      EggParameters moved = sc.recommended;
      for (Param p : kAllParams) {
        if (sc.is_fixed(p)) {
          moved[p] = sc.bounds[index(p)].lower == moved[p] ? sc.bounds[index(p)].upper : sc.bounds[index(p)].lower;
          break;
        }
      }
      const std::string code = protocol_code([&] { h.submit_trial(probe, egg.scenario_id, moved); });
      c.expect(!code.empty(), "trial on a finished egg accepted");
      if (egg.trials.size() == kMaxTrials) c.expect(code == "trials_exhausted", "expected trials_exhausted, got " + code);
    }

    // Persist, reload and replay.
    std::stringstream log;
    for (const auto& e : s.history) write_event(log, e);
    const Session back = h.replay(read_events(log));
    c.expect(back.same_state(s), "replay differs");
    c.expect(session_metrics(back).treatment.success_rate == run.metrics.treatment.success_rate, "metrics differ");

    // Client payloads never carry optima.
    const std::string client = session_to_json(s, h).dump();
    c.expect(client.find("\"optimal\"") == std::string::npos, "session payload has an optimal field");
    for (const auto& [id, payload] : s.explanations) {
      c.expect(payload.dump().find("\"optimal\"") == std::string::npos, "explanation payload has an optimal field");
    }
  }

  // Fresh-session gates.
  Session fresh = h.start_session(Condition::Visual, 9, "gate");
  const Scenario& chicken = h.scenario("chicken");
  c.expect(protocol_code([&] { h.submit_trial(fresh, "chicken", chicken.recommended); }) == "no_adjustment",
           "unadjusted trial accepted");
  EggParameters moved = chicken.optimal;
  moved.mass_g += 1.0;
  c.expect(protocol_code([&] { h.submit_trial(fresh, "chicken", moved); }) == "fixed_parameter_modified",
           "fixed parameter accepted");
  for (const auto& sc : scenarios()) {
    for (const std::string& body : {scenario_public_json(sc).dump()}) {
      c.expect(body.find("optimal") == std::string::npos, "public scenario json has optimal");
    }
  }
  return c.outcome(std::to_string(sessions) + " agent sessions, " + std::to_string(trials) +
                   " trials: cap, gate, immutability, assignment, replay, payload checks");
}

struct Criterion {
  const char* name;
  double budget_s;
  Outcome (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"Boiling-point anchor", 1.0, boiling_anchor},
      {"Scenario solvability", 1.0, scenario_solvability},
      {"Sensitivity reproduction", 1.0, sensitivity_reproduction},
      {"GP oracle equivalence", 10.0, gp_oracle},
      {"TNTRules property suite", 30.0, tntrules_properties},
      {"BO convergence property", 120.0, bo_convergence},
      {"Agent analogue of the headline result", 120.0, agent_analogue},
      {"Rendering golden files", 5.0, rendering},
      {"Harness protocol", 10.0, harness_protocol},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > cr.budget_s) {
      o.pass = false;
      o.detail += "; runtime " + num(secs, 3) + " s over the " + num(cr.budget_s) + " s budget";
    }
    failed += !o.pass;
    std::printf("%s  %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", cr.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed;
}
