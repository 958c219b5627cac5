#include "xbo/bo.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xbo/errors.hpp"
#include "xbo/random.hpp"

namespace xbo {

namespace {

constexpr std::array<unsigned, 16> kPrimes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

double radical_inverse(std::uint64_t i, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

// Point `index` of a Halton sequence under a Cranley-Patterson rotation.
std::vector<double> shifted_halton(std::uint64_t index, const std::vector<double>& shift) {
  std::vector<double> u(shift.size());
  for (std::size_t j = 0; j < shift.size(); ++j) {
    double v = radical_inverse(index, kPrimes[j % kPrimes.size()]) + shift[j];
    u[j] = v - std::floor(v);
  }
  return u;
}

std::vector<double> random_shift(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> s(n);
  for (auto& v : s) v = rng.uniform();
  return s;
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

void SearchSpace::validate() const {
  if (dims.empty()) throw ConfigError("search space has no dimensions");
  for (const auto& d : dims) {
    if (!(d.bounds.lower < d.bounds.upper)) throw ConfigError("dimension " + d.name + ": lower must be < upper");
    if (d.fixed && !d.bounds.contains(*d.fixed)) throw ConfigError("dimension " + d.name + ": fixed value outside bounds");
  }
}

std::vector<Interval> SearchSpace::bounds() const {
  std::vector<Interval> b;
  b.reserve(dims.size());
  for (const auto& d : dims) b.push_back(d.bounds);
  return b;
}

std::vector<std::size_t> SearchSpace::free_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    if (!dims[j].fixed) idx.push_back(j);
  }
  return idx;
}

bool SearchSpace::feasible(const Point& x) const {
  if (x.size() != dims.size()) return false;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    if (!std::isfinite(x[j]) || !dims[j].bounds.contains(x[j])) return false;
    if (dims[j].fixed && x[j] != *dims[j].fixed) return false;
  }
  return true;
}

Point SearchSpace::from_unit(const std::vector<double>& free_unit) const {
  Point x(dims.size());
  std::size_t k = 0;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    if (dims[j].fixed) {
      x[j] = *dims[j].fixed;
    } else {
      const double u = std::clamp(free_unit[k++], 0.0, 1.0);
      x[j] = dims[j].bounds.lower + u * dims[j].bounds.width();
    }
  }
  return x;
}

SearchSpace SearchSpace::egg(const std::array<Interval, kParamCount>& bounds,
                             const std::array<std::optional<double>, kParamCount>& fixed) {
  SearchSpace s;
  for (Param p : kAllParams) {
    s.dims.push_back({std::string(info(p).key), bounds[index(p)], fixed[index(p)]});
  }
  s.validate();
  return s;
}

SearchSpace SearchSpace::egg_default() {
  std::array<Interval, kParamCount> b;
  for (Param p : kAllParams) b[index(p)] = {info(p).lower, info(p).upper};
  return egg(b);
}

std::optional<std::size_t> BoState::incumbent() const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (observations[i].failed) continue;
    if (!best || observations[i].y < observations[*best].y) best = i;
  }
  return best;
}

std::vector<double> BoState::training_targets() const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& o : observations) {
    if (!o.failed) worst = std::max(worst, o.y);
  }
  const double penalty = std::isfinite(worst) ? 2.0 * std::max(worst, 0.5) : 1.0;
  std::vector<double> y;
  y.reserve(observations.size());
  for (const auto& o : observations) y.push_back(o.failed ? penalty : o.y);
  return y;
}

BoState make_state(SearchSpace space, std::uint64_t seed, FitOptions fit_options) {
  space.validate();
  BoState s;
  s.space = std::move(space);
  s.seed = seed;
  s.fit_options = fit_options;
  return s;
}

double expected_improvement(const Posterior& post, double best) {
  const double improvement = best - post.mean;
  if (post.std <= 1e-12) return std::max(improvement, 0.0);
  const double z = improvement / post.std;
  return improvement * normal_cdf(z) + post.std * normal_pdf(z);
}

Point propose(const BoState& state, ProposeNotice* notice) {
  const SearchSpace& space = state.space;
  const auto free = space.free_indices();
  if (notice) *notice = {};
  if (free.empty()) {
    if (notice) notice->degenerate = true;
    return space.from_unit({});
  }

  const auto incumbent = state.incumbent();
  if (state.observations.size() < kInitialDesign || !state.model || !incumbent) {
    if (notice) notice->space_filling = true;
    const auto shift = random_shift(derive_seed(state.seed, 0), free.size());
    return space.from_unit(shifted_halton(state.observations.size() + 1, shift));
  }

  const GpModel& model = *state.model;
  const double best_y = state.observations[*incumbent].y;
  const auto bounds = space.bounds();

  // Candidates live in normalised model coordinates; pinned dimensions are constant.
  Point base(space.size());
  for (std::size_t j = 0; j < space.size(); ++j) {
    if (space.dims[j].fixed) base[j] = (*space.dims[j].fixed - bounds[j].lower) / bounds[j].width();
  }
  auto embed = [&](const std::vector<double>& free_unit) {
    Point u = base;
    for (std::size_t k = 0; k < free.size(); ++k) u[free[k]] = free_unit[k];
    return u;
  };
  auto score = [&](const std::vector<double>& free_unit, double* std_out = nullptr) {
    const Posterior p = predict_normalized(model, embed(free_unit));
    if (std_out) *std_out = p.std;
    return expected_improvement(p, best_y);
  };

  const auto shift = random_shift(derive_seed(state.seed, 1 + state.observations.size()), free.size());
  std::vector<double> best_u;
  double best_ei = -1.0;
  std::vector<double> widest_u;
  double widest_std = -1.0;
  for (std::size_t i = 0; i < kCandidateCount; ++i) {
    auto u = shifted_halton(i + 1, shift);
    double sd = 0.0;
    const double ei = score(u, &sd);
    if (ei > best_ei) {
      best_ei = ei;
      best_u = u;
    }
    if (sd > widest_std) {
      widest_std = sd;
      widest_u = std::move(u);
    }
  }

  // Compass search from the best candidate and from the incumbent.
  std::vector<double> inc_u(free.size());
  const Point& inc_x = state.observations[*incumbent].x;
  for (std::size_t k = 0; k < free.size(); ++k) {
    inc_u[k] = (inc_x[free[k]] - bounds[free[k]].lower) / bounds[free[k]].width();
  }
  for (auto start : {best_u, inc_u}) {
    double val = score(start);
    for (double step = 0.05; step >= 0.002; step *= 0.5) {
      bool improved = true;
      while (improved) {
        improved = false;
        for (std::size_t k = 0; k < free.size() && !improved; ++k) {
          for (double dir : {1.0, -1.0}) {
            auto u = start;
            u[k] = std::clamp(u[k] + dir * step, 0.0, 1.0);
            if (u[k] == start[k]) continue;
            const double v = score(u);
            if (v > val + 1e-15) {
              val = v;
              start = std::move(u);
              improved = true;
              break;
            }
          }
        }
      }
    }
    if (val > best_ei) {
      best_ei = val;
      best_u = start;
    }
  }

  if (!(best_ei > 0.0)) best_u = widest_u;
  return space.from_unit(best_u);
}

namespace {

BoState append(BoState state, Point x, double y, bool failed) {
  if (!state.space.feasible(x)) throw DomainError("observed point violates bounds or fixed values");
  if (!failed && !std::isfinite(y)) throw DomainError("observed objective must be finite");
  state.observations.push_back({std::move(x), y, failed});
  ++state.iteration;

  bool distinct = false;
  const auto& first = state.observations.front().x;
  for (const auto& o : state.observations) {
    if (o.x != first) {
      distinct = true;
      break;
    }
  }
  if (distinct) {
    std::vector<Point> xs;
    xs.reserve(state.observations.size());
    for (const auto& o : state.observations) xs.push_back(o.x);
    state.model = fit(xs, state.training_targets(), state.space.bounds(), state.fit_options);
  } else {
    state.model.reset();
  }
  return state;
}

}  // namespace

BoState observe(BoState state, Point x, double y) { return append(std::move(state), std::move(x), y, false); }

BoState observe_failure(BoState state, Point x) { return append(std::move(state), std::move(x), 0.0, true); }

RunResult run(const Objective& objective, const SearchSpace& space, std::size_t budget, std::uint64_t seed,
              FitOptions fit_options) {
  if (budget < 3) throw ConfigError("budget must be at least 3");
  BoState state = make_state(space, seed, fit_options);
  RunResult result;
  for (std::size_t it = 0; it < budget; ++it) {
    Point x = propose(state);
    TraceEntry entry;
    entry.iteration = it;
    entry.x = x;
    try {
      entry.y = objective(x);
      state = observe(std::move(state), std::move(x), entry.y);
    } catch (const UncookableError&) {
      entry.failed = true;
      state = observe_failure(std::move(state), std::move(x));
      entry.y = state.training_targets().back();
    }
    const auto inc = state.incumbent();
    entry.incumbent = inc ? state.observations[*inc].y : std::numeric_limits<double>::quiet_NaN();
    result.trace.push_back(std::move(entry));
  }

  const auto inc = state.incumbent();
  const std::size_t best = inc ? *inc : 0;
  result.best_x = state.observations[best].x;
  if (state.model) {
    result.best_posterior = predict_one(*state.model, result.best_x);
  } else {
    result.best_posterior = {state.observations[best].y, 0.0};
  }
  result.state = std::move(state);
  return result;
}

EggParameters to_egg(const Point& x) {
  if (x.size() != kParamCount) throw DomainError("egg point must have six coordinates");
  return EggParameters{x[0], x[1], x[2], x[3], x[4], x[5]};
}

Point to_point(const EggParameters& p) {
  const auto a = p.to_array();
  return Point(a.begin(), a.end());
}

EggRunResult run_egg(const std::function<double(const EggParameters&)>& objective, const SearchSpace& space,
                     std::size_t budget, std::uint64_t seed) {
  if (space.size() != kParamCount) throw ConfigError("egg search space must have six dimensions");
  EggRunResult r;
  r.raw = run([&](const Point& x) { return objective(to_egg(x)); }, space, budget, seed);
  r.best = {to_egg(r.raw.best_x), r.raw.best_posterior};
  return r;
}

Recommendation noisy_recommendation(const EggParameters& true_optimum, const std::array<double, kParamCount>& offsets) {
  EggParameters rec = true_optimum;
  for (Param p : kAllParams) {
    rec[p] = true_optimum[p] + offsets[index(p)];
    if (rec[p] < info(p).lower || rec[p] > info(p).upper) {
      std::ostringstream os;
      os << "offset moves " << info(p).key << " to " << rec[p] << ", outside [" << info(p).lower << ", "
         << info(p).upper << "]";
      throw DomainError(os.str());
    }
  }
  double believed = 0.0;
  try {
    believed = cooking_loss(true_optimum);
  } catch (const UncookableError&) {
  }
  return {rec, {believed, 0.0}};
}

void write_trace_jsonl(std::ostream& out, const std::vector<TraceEntry>& trace, const SearchSpace& space) {
  for (const auto& e : trace) {
    nlohmann::ordered_json j;
    j["iteration"] = e.iteration;
    nlohmann::ordered_json x = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < space.size(); ++k) x[space.dims[k].name] = e.x[k];
    j["x"] = x;
    j["y"] = e.y;
    if (e.failed) j["failed"] = true;
    if (std::isfinite(e.incumbent)) {
      j["incumbent"] = e.incumbent;
    } else {
      j["incumbent"] = nullptr;
    }
    out << j.dump() << '\n';
  }
}

std::vector<Observation> read_trace_jsonl(std::istream& in, const SearchSpace& space) {
  std::vector<Observation> obs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Observation o;
      o.x.resize(space.size());
      for (std::size_t k = 0; k < space.size(); ++k) o.x[k] = j.at("x").at(space.dims[k].name).get<double>();
      o.y = j.at("y").get<double>();
      o.failed = j.value("failed", false);
      obs.push_back(std::move(o));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("observation line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return obs;
}

}  // namespace xbo
