#include "xbo/tntrules.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xbo/errors.hpp"
#include "xbo/random.hpp"

namespace xbo {

namespace {

constexpr std::uint64_t kDatasetStream = 0x7e5;

std::size_t condensed_index(std::size_t n, std::size_t i, std::size_t j) {
  if (i > j) std::swap(i, j);
  return n * i - i * (i + 1) / 2 + (j - i - 1);
}

std::vector<double> column_scaled(std::vector<double> column) {
  const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
  const double min = *lo;
  const double span = *hi - *lo;
  for (double& v : column) v = span > 0.0 ? (v - min) / span : 0.0;
  return column;
}

bool antecedent_less(const Rule& a, const Rule& b) {
  for (std::size_t i = 0; i < std::min(a.antecedent.size(), b.antecedent.size()); ++i) {
    if (a.antecedent[i].lower != b.antecedent[i].lower) return a.antecedent[i].lower < b.antecedent[i].lower;
    if (a.antecedent[i].upper != b.antecedent[i].upper) return a.antecedent[i].upper < b.antecedent[i].upper;
  }
  return a.antecedent.size() < b.antecedent.size();
}

}  // namespace

ExplanationDataset generate_dataset(const GpModel& model, const SearchSpace& space, std::size_t n_e,
                                    std::uint64_t seed) {
  if (n_e < kMinExplanationSamples) {
    throw ConfigError("explanation dataset needs at least " + std::to_string(kMinExplanationSamples) +
                      " samples, got " + std::to_string(n_e));
  }
  if (!model.fitted()) throw UsageError("generate_dataset requires a fitted model");
  space.validate();

  const std::size_t free = space.free_indices().size();
  Rng rng(derive_seed(seed, kDatasetStream));
  ExplanationDataset data;
  data.inputs.reserve(n_e);
  std::vector<double> unit(free);
  for (std::size_t r = 0; r < n_e; ++r) {
    for (double& u : unit) u = rng.uniform();
    data.inputs.push_back(space.from_unit(unit));
  }
  const auto post = predict(model, data.inputs);
  data.mu.reserve(n_e);
  data.sigma.reserve(n_e);
  for (const auto& p : post) {
    data.mu.push_back(p.mean);
    data.sigma.push_back(p.std);
  }
  return data;
}

std::vector<std::size_t> Linkage::leaves(std::size_t node) const {
  std::vector<std::size_t> out;
  std::vector<std::size_t> stack{node};
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    if (is_leaf(cur)) {
      out.push_back(cur);
    } else {
      const Merge& m = merges.at(cur - n_leaves);
      stack.push_back(m.right);
      stack.push_back(m.left);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> Linkage::cut(double height) const {
  std::vector<std::vector<std::size_t>> out;
  if (n_leaves == 0) return out;
  std::vector<std::size_t> stack{root()};
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    if (!is_leaf(cur) && merges[cur - n_leaves].height > height) {
      stack.push_back(merges[cur - n_leaves].right);
      stack.push_back(merges[cur - n_leaves].left);
    } else {
      out.push_back(leaves(cur));
    }
  }
  return out;
}

Linkage ward_linkage(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  if (n < 2) throw UsageError("clustering needs at least 2 rows");

  // Squared Ward distances; for singletons this is the squared Euclidean distance.
  std::vector<double> dist(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) {
        const double d = rows[i][k] - rows[j][k];
        s += d * d;
      }
      dist[condensed_index(n, i, j)] = s;
    }
  }

  std::vector<std::size_t> size(n, 1);
  std::vector<char> active(n, 1);
  struct RawMerge {
    std::size_t a, b;
    double d2;
  };
  std::vector<RawMerge> raw;
  raw.reserve(n - 1);
  std::vector<std::size_t> chain;
  chain.reserve(n);

  while (raw.size() < n - 1) {
    if (chain.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        if (active[i]) {
          chain.push_back(i);
          break;
        }
      }
    }
    const std::size_t a = chain.back();
    const bool has_prev = chain.size() >= 2;
    const std::size_t prev = has_prev ? chain[chain.size() - 2] : n;
    std::size_t b = prev;
    double best = has_prev ? dist[condensed_index(n, a, prev)] : std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a) continue;
      const double d = dist[condensed_index(n, a, k)];
      if (d < best) {
        best = d;
        b = k;
      }
    }
    if (has_prev && b == prev) {
      chain.pop_back();
      chain.pop_back();
      const std::size_t keep = std::min(a, b);
      const std::size_t drop = std::max(a, b);
      raw.push_back({keep, drop, best});
      const double na = static_cast<double>(size[keep]);
      const double nb = static_cast<double>(size[drop]);
      active[drop] = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (!active[k] || k == keep) continue;
        const double nk = static_cast<double>(size[k]);
        const double dka = dist[condensed_index(n, k, keep)];
        const double dkb = dist[condensed_index(n, k, drop)];
        dist[condensed_index(n, k, keep)] = ((nk + na) * dka + (nk + nb) * dkb - nk * best) / (nk + na + nb);
      }
      size[keep] += size[drop];
    } else {
      chain.push_back(b);
    }
  }

  std::stable_sort(raw.begin(), raw.end(), [](const RawMerge& x, const RawMerge& y) { return x.d2 < y.d2; });

  // Relabel slot indices to node ids through a union-find over merge order.
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::vector<std::size_t> node_size(2 * n - 1, 1);
  Linkage tree;
  tree.n_leaves = n;
  tree.merges.reserve(n - 1);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::size_t x = find(raw[i].a);
    std::size_t y = find(raw[i].b);
    if (x > y) std::swap(x, y);
    const std::size_t node = n + i;
    parent[x] = node;
    parent[y] = node;
    node_size[node] = node_size[x] + node_size[y];
    tree.merges.push_back({x, y, std::sqrt(std::max(0.0, raw[i].d2)), node_size[node]});
  }
  return tree;
}

Linkage cluster(const ExplanationDataset& dataset) {
  const std::size_t n = dataset.size();
  if (n < 2) throw UsageError("clustering needs at least 2 rows");
  const std::size_t d = dataset.inputs.front().size();
  std::vector<std::vector<double>> columns;
  columns.reserve(d + 2);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = dataset.inputs[r][c];
    columns.push_back(column_scaled(std::move(col)));
  }
  columns.push_back(column_scaled(dataset.mu));
  columns.push_back(column_scaled(dataset.sigma));

  std::vector<std::vector<double>> rows(n, std::vector<double>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    for (std::size_t r = 0; r < n; ++r) rows[r][c] = columns[c][r];
  }
  return ward_linkage(rows);
}

double mu_variance(const ExplanationDataset& dataset, const std::vector<std::size_t>& rows) {
  if (rows.empty()) return 0.0;
  double mean = 0.0;
  for (std::size_t r : rows) mean += dataset.mu[r];
  mean /= static_cast<double>(rows.size());
  double var = 0.0;
  for (std::size_t r : rows) {
    const double d = dataset.mu[r] - mean;
    var += d * d;
  }
  return var / static_cast<double>(rows.size());
}

ClusterSet variance_prune(const Linkage& tree, const ExplanationDataset& dataset, double t_s) {
  if (!(t_s >= 0.0)) throw ConfigError("variance threshold must be non-negative");
  ClusterSet out;
  if (tree.n_leaves == 0) return out;
  std::vector<std::size_t> stack{tree.root()};
  while (!stack.empty()) {
    const std::size_t node = stack.back();
    stack.pop_back();
    if (tree.is_leaf(node)) {
      out.clusters.push_back({node});
      out.heights.push_back(0.0);
      continue;
    }
    auto rows = tree.leaves(node);
    const Merge& m = tree.merges[node - tree.n_leaves];
    if (mu_variance(dataset, rows) <= t_s) {
      std::sort(rows.begin(), rows.end());
      out.clusters.push_back(std::move(rows));
      out.heights.push_back(m.height);
    } else {
      stack.push_back(m.right);
      stack.push_back(m.left);
    }
  }
  return out;
}

bool Rule::covers(const Point& x) const {
  for (std::size_t i = 0; i < antecedent.size(); ++i) {
    if (!antecedent[i].contains(x[i])) return false;
  }
  return true;
}

std::vector<Rule> construct_rules(const ExplanationDataset& dataset, const ClusterSet& clusters) {
  std::vector<Rule> rules;
  rules.reserve(clusters.clusters.size());
  for (const auto& rows : clusters.clusters) {
    if (rows.empty()) throw UsageError("cannot build a rule from an empty cluster");
    Rule rule;
    rule.rows = rows;
    const std::size_t d = dataset.inputs[rows.front()].size();
    rule.antecedent.assign(d, Interval{std::numeric_limits<double>::infinity(),
                                       -std::numeric_limits<double>::infinity()});
    std::size_t rep = rows.front();
    for (std::size_t r : rows) {
      for (std::size_t i = 0; i < d; ++i) {
        rule.antecedent[i].lower = std::min(rule.antecedent[i].lower, dataset.inputs[r][i]);
        rule.antecedent[i].upper = std::max(rule.antecedent[i].upper, dataset.inputs[r][i]);
      }
      if (dataset.mu[r] < dataset.mu[rep] || (dataset.mu[r] == dataset.mu[rep] && r < rep)) rep = r;
    }
    rule.representative = rep;
    rule.consequent = {dataset.mu[rep] - 2.0 * dataset.sigma[rep], dataset.mu[rep] + 2.0 * dataset.sigma[rep]};
    rules.push_back(std::move(rule));
  }
  return rules;
}

std::vector<Rule> score_rules(std::vector<Rule> rules, const ExplanationDataset& dataset,
                              const RuleWeights& weights) {
  const std::size_t n = dataset.size();
  if (n == 0) throw UsageError("cannot score rules on an empty dataset");
  const double y_best = *std::min_element(dataset.mu.begin(), dataset.mu.end());
  for (Rule& rule : rules) {
    std::size_t covered = 0;
    std::size_t matched = 0;
    double rel = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (!rule.covers(dataset.inputs[r])) continue;
      ++covered;
      if (!rule.consequent.contains(dataset.mu[r])) continue;
      ++matched;
      const double diff = dataset.mu[r] - y_best;
      const double s = dataset.sigma[r];
      const double lik = s > 0.0 ? std::exp(-diff * diff / (2.0 * s * s)) : (diff == 0.0 ? 1.0 : 0.0);
      rel = std::max(rel, lik);
    }
    rule.coverage = static_cast<double>(covered) / static_cast<double>(n);
    rule.support = static_cast<double>(matched) / static_cast<double>(n);
    rule.confidence = covered > 0 ? static_cast<double>(matched) / static_cast<double>(covered) : 0.0;
    rule.relevance = rel;
    rule.interestingness = weights.coverage * rule.coverage + weights.support * rule.support +
                           weights.confidence * rule.confidence + weights.relevance * rule.relevance;
  }
  return rules;
}

std::vector<Rule> filter_rules(std::vector<Rule> rules, double t_alpha) {
  std::vector<Rule> kept;
  for (Rule& r : rules) {
    if (r.interestingness >= t_alpha) kept.push_back(std::move(r));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Rule& a, const Rule& b) {
    if (a.interestingness != b.interestingness) return a.interestingness > b.interestingness;
    if (a.support != b.support) return a.support > b.support;
    return antecedent_less(a, b);
  });
  return kept;
}

TuneDecision binarize_tune(const Rule& best_rule, const Point& recommendation, const SearchSpace& space,
                           const GpModel& model, double tune_threshold) {
  space.validate();
  if (recommendation.size() != space.size() || best_rule.antecedent.size() != space.size()) {
    throw UsageError("recommendation and rule must match the search space dimension");
  }
  TuneDecision decision;
  decision.predicted = best_rule.consequent;
  const double base = predict_one(model, recommendation).mean;

  std::vector<double> impact(space.size(), 0.0);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.dims[i].fixed) continue;
    const Interval range = best_rule.antecedent[i];
    std::vector<Point> grid(kImpactGridPoints, recommendation);
    for (std::size_t k = 0; k < kImpactGridPoints; ++k) {
      grid[k][i] = range.lower + range.width() * static_cast<double>(k) / (kImpactGridPoints - 1);
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : predict(model, grid)) best = std::min(best, p.mean);
    impact[i] = std::max(0.0, base - best);
  }
  const double max_impact = *std::max_element(impact.begin(), impact.end());
  decision.converged = !(max_impact > 0.0);

  for (std::size_t i = 0; i < space.size(); ++i) {
    TuneEntry e;
    e.name = space.dims[i].name;
    e.fixed = space.dims[i].fixed.has_value();
    e.impact = impact[i];
    const Interval range = best_rule.antecedent[i];
    if (!e.fixed && !decision.converged && impact[i] >= tune_threshold * max_impact && range.width() > 0.0) {
      e.tune = true;
      e.range = {std::max(range.lower, space.dims[i].bounds.lower), std::min(range.upper, space.dims[i].bounds.upper)};
    }
    decision.entries.push_back(std::move(e));
  }
  return decision;
}

Explanation explain(const GpModel& model, const SearchSpace& space, const Point& recommendation,
                    const ExplainConfig& config) {
  const double wsum = config.weights.coverage + config.weights.support + config.weights.confidence +
                      config.weights.relevance;
  if (config.weights.coverage < 0 || config.weights.support < 0 || config.weights.confidence < 0 ||
      config.weights.relevance < 0 || std::abs(wsum - 1.0) > 1e-9) {
    throw ConfigError("rule weights must be non-negative and sum to 1");
  }
  if (config.t_s && !(*config.t_s > 0.0)) throw ConfigError("t_s must be positive");

  const auto dataset = generate_dataset(model, space, config.n_e, config.seed);
  const auto [lo, hi] = std::minmax_element(dataset.mu.begin(), dataset.mu.end());
  Explanation out;
  if (config.t_s) {
    out.t_s = *config.t_s;
  } else {
    const double span = 0.05 * (*hi - *lo);
    out.t_s = span * span;
  }

  const auto tree = cluster(dataset);
  const auto clusters = variance_prune(tree, dataset, out.t_s);
  out.cluster_count = clusters.clusters.size();
  auto scored = score_rules(construct_rules(dataset, clusters), dataset, config.weights);
  out.rules = filter_rules(scored, config.t_alpha);
  Rule best;
  if (out.rules.empty()) {
    out.fallback = true;
    auto all = filter_rules(std::move(scored), -std::numeric_limits<double>::infinity());
    best = all.front();
  } else {
    best = out.rules.front();
  }
  out.decision = binarize_tune(best, recommendation, space, model, config.tune_threshold);
  out.applied = best;
  for (const auto& e : out.decision.entries) out.impacts.push_back(e.impact);
  return out;
}

nlohmann::ordered_json rules_to_json(const std::vector<Rule>& rules, const SearchSpace& space) {
  auto arr = nlohmann::ordered_json::array();
  for (const Rule& r : rules) {
    nlohmann::ordered_json ant = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < r.antecedent.size() && i < space.size(); ++i) {
      ant[space.dims[i].name] = {r.antecedent[i].lower, r.antecedent[i].upper};
    }
    nlohmann::ordered_json j;
    j["antecedent"] = std::move(ant);
    j["consequent"] = {r.consequent.lower, r.consequent.upper};
    j["covr"] = r.coverage;
    j["supp"] = r.support;
    j["con"] = r.confidence;
    j["rel"] = r.relevance;
    j["alpha"] = r.interestingness;
    arr.push_back(std::move(j));
  }
  return arr;
}

nlohmann::ordered_json decision_to_json(const TuneDecision& decision) {
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& e : decision.entries) {
    nlohmann::ordered_json p;
    p["name"] = e.name;
    p["tune"] = e.tune;
    p["fixed"] = e.fixed;
    if (e.tune) p["range"] = {e.range.lower, e.range.upper};
    p["impact"] = e.impact;
    params.push_back(std::move(p));
  }
  nlohmann::ordered_json j;
  j["parameters"] = std::move(params);
  j["predicted"] = {decision.predicted.lower, decision.predicted.upper};
  j["converged"] = decision.converged;
  return j;
}

}  // namespace xbo
