#pragma once

// TNTRules: rule-based Tune / No-Tune explanations extracted from a GP surrogate.
//
// Pipeline: sample the search space uniformly and annotate each sample with the
// posterior (mu, sigma); cluster [inputs; mu; sigma] with Ward linkage; cut the
// tree top-down wherever Var(mu) exceeds t_s; turn every cluster into an IF-THEN
// rule (antecedent = bounding box of the cluster, consequent = mu* ± 2 sigma*);
// score, filter, and finally split parameters into Tune / No-Tune around a
// recommendation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xbo/bo.hpp"
#include "xbo/gp.hpp"

namespace xbo {

struct ExplanationDataset {
  std::vector<Point> inputs;  // natural units
  std::vector<double> mu;
  std::vector<double> sigma;

  std::size_t size() const noexcept { return mu.size(); }
};

inline constexpr std::size_t kMinExplanationSamples = 50;

ExplanationDataset generate_dataset(const GpModel& model, const SearchSpace& space, std::size_t n_e,
                                    std::uint64_t seed);

/// One agglomeration step. Node ids below n_leaves are rows; node n_leaves + i is
/// the cluster created by step i.
struct Merge {
  std::size_t left = 0;
  std::size_t right = 0;
  double height = 0.0;
  std::size_t size = 0;
};

struct Linkage {
  std::size_t n_leaves = 0;
  std::vector<Merge> merges;  // non-decreasing height

  std::size_t root() const { return n_leaves == 1 ? 0 : n_leaves + merges.size() - 1; }
  bool is_leaf(std::size_t node) const noexcept { return node < n_leaves; }
  std::vector<std::size_t> leaves(std::size_t node) const;
  /// Flat clusters obtained by cutting every merge with height > `height`.
  std::vector<std::vector<std::size_t>> cut(double height) const;
};

/// Ward linkage on the given feature rows (nearest-neighbour chain, O(n^2) memory).
Linkage ward_linkage(const std::vector<std::vector<double>>& rows);

/// Ward linkage over the min-max column-normalised rows of [inputs; mu; sigma].
Linkage cluster(const ExplanationDataset& dataset);

struct ClusterSet {
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<double> heights;  // merge height of each accepted node, 0 for leaves
};

/// Population variance of mu over `rows`.
double mu_variance(const ExplanationDataset& dataset, const std::vector<std::size_t>& rows);

ClusterSet variance_prune(const Linkage& tree, const ExplanationDataset& dataset, double t_s);

struct RuleWeights {
  double coverage = 0.25;
  double support = 0.25;
  double confidence = 0.25;
  double relevance = 0.25;
};

struct Rule {
  std::vector<Interval> antecedent;
  Interval consequent;
  std::vector<std::size_t> rows;  // the cluster the rule was built from
  std::size_t representative = 0;  // row with minimum mu
  double coverage = 0.0;
  double support = 0.0;
  double confidence = 0.0;
  double relevance = 0.0;
  double interestingness = 0.0;

  bool covers(const Point& x) const;
};

std::vector<Rule> construct_rules(const ExplanationDataset& dataset, const ClusterSet& clusters);

/// Fills coverage, support, confidence, relevance and interestingness.
std::vector<Rule> score_rules(std::vector<Rule> rules, const ExplanationDataset& dataset,
                              const RuleWeights& weights = {});

/// Rules with interestingness >= t_alpha, by interestingness descending, then
/// support descending, then lexicographic antecedent.
std::vector<Rule> filter_rules(std::vector<Rule> rules, double t_alpha);

struct TuneEntry {
  std::string name;
  bool tune = false;
  bool fixed = false;
  Interval range;  // meaningful when tune
  double impact = 0.0;
};

struct TuneDecision {
  std::vector<TuneEntry> entries;  // search-space order
  Interval predicted;  // 95% bounds of the predicted objective
  bool converged = false;  // every impact was zero
};

inline constexpr std::size_t kImpactGridPoints = 33;

TuneDecision binarize_tune(const Rule& best_rule, const Point& recommendation, const SearchSpace& space,
                           const GpModel& model, double tune_threshold = 0.1);

struct ExplainConfig {
  std::size_t n_e = 2000;
  std::optional<double> t_s;  // default (0.05 * range of mu)^2
  double t_alpha = 0.5;
  RuleWeights weights;
  std::uint64_t seed = 0;
  double tune_threshold = 0.1;
};

struct Explanation {
  TuneDecision decision;
  std::vector<Rule> rules;  // filtered rule set, best first
  Rule applied;  // the rule the decision was derived from
  std::vector<double> impacts;  // per dimension
  bool fallback = false;  // filtering removed every rule; top unfiltered rule used
  double t_s = 0.0;
  std::size_t cluster_count = 0;
};

Explanation explain(const GpModel& model, const SearchSpace& space, const Point& recommendation,
                    const ExplainConfig& config = {});

/// [{antecedent:{name:[lo,hi]}, consequent:[lo,hi], covr, supp, con, rel, alpha}, ...]
nlohmann::ordered_json rules_to_json(const std::vector<Rule>& rules, const SearchSpace& space);
nlohmann::ordered_json decision_to_json(const TuneDecision& decision);

}  // namespace xbo
