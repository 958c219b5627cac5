#pragma once

// Sequential Bayesian optimisation (minimisation) with Expected Improvement
// over a bounded box in which some dimensions may be pinned.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "xbo/egg_model.hpp"
#include "xbo/gp.hpp"

namespace xbo {

struct Dimension {
  std::string name;
  Interval bounds;
  std::optional<double> fixed;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  /// Throws ConfigError when a dimension has lower >= upper or a fixed value outside its bounds.
  void validate() const;
  std::size_t size() const noexcept { return dims.size(); }
  std::vector<Interval> bounds() const;
  std::vector<std::size_t> free_indices() const;
  bool feasible(const Point& x) const;
  /// Maps unit-cube coordinates of the free dimensions onto a full point.
  Point from_unit(const std::vector<double>& free_unit) const;

  /// The six egg parameters in field order with the scenario bounds and pins.
  static SearchSpace egg(const std::array<Interval, kParamCount>& bounds,
                         const std::array<std::optional<double>, kParamCount>& fixed = {});
  /// Full Table 2 parameter ranges, nothing pinned.
  static SearchSpace egg_default();
};

struct Observation {
  Point x;
  double y = 0.0;
  bool failed = false;  // objective could not be evaluated; y is a penalty
};

struct BoState {
  SearchSpace space;
  std::vector<Observation> observations;
  std::optional<GpModel> model;
  std::uint64_t seed = 0;
  std::size_t iteration = 0;
  FitOptions fit_options;

  /// Index of the best successfully evaluated observation.
  std::optional<std::size_t> incumbent() const;
  /// Targets handed to the surrogate: failures get 2x the worst successful loss.
  std::vector<double> training_targets() const;
};

BoState make_state(SearchSpace space, std::uint64_t seed, FitOptions fit_options = {});

inline constexpr std::size_t kInitialDesign = 3;
inline constexpr std::size_t kCandidateCount = 4096;

struct ProposeNotice {
  bool degenerate = false;   // every dimension pinned
  bool space_filling = false;  // not enough data for a model-based proposal
};

/// Next point to evaluate. Deterministic in (state, seed).
Point propose(const BoState& state, ProposeNotice* notice = nullptr);

/// Appends an evaluated point and refits the surrogate. Throws DomainError for infeasible x.
BoState observe(BoState state, Point x, double y);
/// Records a point whose evaluation failed (e.g. uncookable).
BoState observe_failure(BoState state, Point x);

double expected_improvement(const Posterior& post, double best);

struct TraceEntry {
  std::size_t iteration = 0;
  Point x;
  double y = 0.0;
  bool failed = false;
  double incumbent = 0.0;  // best successful y so far (NaN before the first success)
};

struct RunResult {
  std::vector<TraceEntry> trace;
  Point best_x;
  Posterior best_posterior;
  BoState state;
};

using Objective = std::function<double(const Point&)>;

/// Runs `budget` evaluations. An objective throwing UncookableError is recorded
/// as a failure and penalised.
RunResult run(const Objective& objective, const SearchSpace& space, std::size_t budget, std::uint64_t seed,
              FitOptions fit_options = {});

struct Recommendation {
  EggParameters values;
  Posterior predicted_objective;
};

EggParameters to_egg(const Point& x);
Point to_point(const EggParameters& p);

struct EggRunResult {
  RunResult raw;
  Recommendation best;
};

EggRunResult run_egg(const std::function<double(const EggParameters&)>& objective, const SearchSpace& space,
                     std::size_t budget, std::uint64_t seed);

/// The true optimum shifted by per-parameter offsets (the perturbed recommendations
/// of the study scenarios). Throws DomainError if an offset leaves the bounds.
Recommendation noisy_recommendation(const EggParameters& true_optimum,
                                    const std::array<double, kParamCount>& offsets);

/// One JSON object per line: {iteration, x:{name: value}, y, incumbent}.
void write_trace_jsonl(std::ostream& out, const std::vector<TraceEntry>& trace, const SearchSpace& space);
/// Reads observations written by write_trace_jsonl (or any {x, y} lines).
std::vector<Observation> read_trace_jsonl(std::istream& in, const SearchSpace& space);

}  // namespace xbo
