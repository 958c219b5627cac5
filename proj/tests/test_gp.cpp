#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gp_oracle_util.hpp"
#include "xbo/errors.hpp"
#include "xbo/gp.hpp"
#include "xbo/random.hpp"

namespace xbo {
namespace {

std::vector<Interval> unit_box(std::size_t d) { return std::vector<Interval>(d, Interval{0.0, 1.0}); }

struct Instance {
  std::vector<Point> x;
  std::vector<double> y;
  std::vector<Interval> bounds;
};

Instance random_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 1 + rng.below(4);
  const std::size_t n = 2 + rng.below(19);
  Instance in;
  for (std::size_t j = 0; j < d; ++j) {
    const double lo = rng.uniform(-10, 10);
    in.bounds.push_back({lo, lo + rng.uniform(0.5, 100)});
  }
  for (std::size_t i = 0; i < n; ++i) {
    Point p(d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      p[j] = rng.uniform(in.bounds[j].lower, in.bounds[j].upper);
      s += std::sin(3.0 * (p[j] - in.bounds[j].lower) / in.bounds[j].width());
    }
    in.x.push_back(p);
    in.y.push_back(s + 0.1 * rng.uniform());
  }
  return in;
}

TEST(GpFit, TwoPointsInterpolate) {
  const std::vector<Point> x{{0.2}, {0.7}};
  const std::vector<double> y{1.5, -0.5};
  const auto m = fit(x, y, unit_box(1));
  const auto post = predict(m, x);
  const double tol = 3.0 * std::sqrt(m.config().noise_variance);
  EXPECT_NEAR(post[0].mean, 1.5, tol);
  EXPECT_NEAR(post[1].mean, -0.5, tol);

  FitOptions exact;
  exact.noise_floor = 0.0;
  const auto m0 = fit(x, y, unit_box(1), exact);
  const auto post0 = predict(m0, x);
  EXPECT_NEAR(post0[0].mean, 1.5, 1e-6);
  EXPECT_NEAR(post0[1].mean, -0.5, 1e-6);
}

TEST(GpFit, ConstantTargets) {
  const std::vector<Point> x{{0.1, 0.1}, {0.5, 0.9}, {0.9, 0.3}};
  const std::vector<double> y{4.0, 4.0, 4.0};
  const auto m = fit(x, y, unit_box(2));
  for (double a = 0.0; a <= 1.0; a += 0.25) {
    for (double b = 0.0; b <= 1.0; b += 0.25) {
      const auto p = predict_one(m, Point{a, b});
      EXPECT_NEAR(p.mean, 4.0, 1e-9);
      EXPECT_LE(p.std, m.prior_std() + 1e-8);
    }
  }
}

TEST(GpFit, LeaveOneOutQuadraticBeatsPriorStd) {
  const std::vector<double> xs{0.0, 0.25, 0.5, 0.75, 1.0};
  for (std::size_t held = 1; held + 1 < xs.size(); ++held) {
    std::vector<Point> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i == held) continue;
      x.push_back({xs[i]});
      y.push_back((xs[i] - 0.4) * (xs[i] - 0.4));
    }
    const auto m = fit(x, y, unit_box(1));
    const auto p = predict_one(m, Point{xs[held]});
    const auto ref = oracle::from_model(m).posterior({xs[held]});
    EXPECT_NEAR(p.mean, ref.first, 1e-8);
    EXPECT_NEAR(p.std, ref.second, 1e-8);
    const double truth = (xs[held] - 0.4) * (xs[held] - 0.4);
    EXPECT_LT(std::abs(p.mean - truth), m.prior_std());
  }
}

TEST(GpFit, DuplicateConflictingTargetsNeedNoiseFloor) {
  const std::vector<Point> x{{0.3}, {0.3}, {0.8}};
  const std::vector<double> y{1.0, 2.0, 0.0};
  FitOptions opts;
  opts.noise_floor = 0.0;
  EXPECT_THROW(fit(x, y, unit_box(1), opts), FitError);
  EXPECT_NO_THROW(fit(x, y, unit_box(1)));
}

TEST(GpFit, NeedsTwoDistinctPoints) {
  const std::vector<Point> x{{0.3}, {0.3}};
  const std::vector<double> y{1.0, 1.0};
  EXPECT_THROW(fit(x, y, unit_box(1)), FitError);
}

TEST(GpFit, IsDeterministic) {
  const auto in = random_instance(7);
  const auto a = fit(in.x, in.y, in.bounds);
  const auto b = fit(in.x, in.y, in.bounds);
  EXPECT_EQ(a.config().length_scales, b.config().length_scales);
  EXPECT_EQ(a.config().signal_variance, b.config().signal_variance);
  EXPECT_EQ(log_marginal_likelihood(a), log_marginal_likelihood(b));
}

TEST(GpPredict, NoiselessTrainingPointIsExact) {
  const std::vector<Point> x{{0.1}, {0.5}, {0.9}};
  const std::vector<double> y{1.0, 3.0, 2.0};
  const auto m = GpModel::with_config(x, y, unit_box(1), {{0.3}, 2.0, 0.0});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto p = predict_one(m, x[i]);
    EXPECT_NEAR(p.mean, y[i], 1e-6);
    EXPECT_NEAR(p.std, 0.0, 1e-3);
  }
}

TEST(GpPredict, FarFromDataRevertsToPrior) {
  const std::vector<Point> x{{0.0}, {0.02}, {0.05}};
  const std::vector<double> y{1.0, 3.0, 2.0};
  const auto m = GpModel::with_config(x, y, unit_box(1), {{0.01}, 2.0, 1e-6});
  const auto p = predict_one(m, Point{1.0});
  EXPECT_NEAR(p.mean, 2.0, 1e-9);
  EXPECT_NEAR(p.std, std::sqrt(2.0), 1e-9);
}

TEST(GpPredict, ThreePointToyMatchesOracle) {
  const std::vector<Point> x{{1.0, 10.0}, {2.0, 30.0}, {4.0, 15.0}};
  const std::vector<double> y{0.5, -1.0, 2.0};
  const std::vector<Interval> b{{0.0, 5.0}, {0.0, 50.0}};
  const auto m = GpModel::with_config(x, y, b, {{0.4, 0.7}, 1.3, 0.01});
  const auto g = oracle::from_model(m);
  for (const Point& q : {Point{0.0, 0.0}, Point{2.5, 25.0}, Point{4.0, 15.0}, Point{5.0, 50.0}}) {
    const auto p = predict_one(m, q);
    const auto r = g.posterior({q[0] / 5.0, q[1] / 50.0});
    EXPECT_NEAR(p.mean, r.first, 1e-8);
    EXPECT_NEAR(p.std, r.second, 1e-8);
  }
}

TEST(GpPredict, ClipsOutsideBoundsAndCounts) {
  const std::vector<Point> x{{0.1}, {0.9}};
  const std::vector<double> y{0.0, 1.0};
  const auto m = GpModel::with_config(x, y, unit_box(1), {{0.5}, 1.0, 1e-4});
  PredictStats stats;
  const auto out = predict(m, {Point{-3.0}, Point{0.0}, Point{4.0}}, &stats);
  EXPECT_EQ(stats.clipped, 2u);
  EXPECT_DOUBLE_EQ(out[0].mean, out[1].mean);
}

TEST(GpPredict, UnfitModelIsUsageError) {
  GpModel m;
  EXPECT_THROW(predict(m, {Point{0.5}}), UsageError);
  EXPECT_THROW(log_marginal_likelihood(m), UsageError);
}

TEST(GpLml, TwoPointOracle) {
  const std::vector<Point> x{{0.2}, {0.6}};
  const std::vector<double> y{1.0, -1.0};
  const auto m = GpModel::with_config(x, y, unit_box(1), {{0.5}, 1.5, 0.1});
  // Closed form for n = 2: y centred to (1, -1).
  const double k12 = 1.5 * std::exp(-0.5 * std::pow(0.4 / 0.5, 2));
  const double a = 1.5 + 0.1 + m.jitter();
  const double det = a * a - k12 * k12;
  const double quad = (a * 1.0 * 1.0 + a * 1.0 * 1.0 + 2.0 * k12 * 1.0) / det;
  const double expected = -0.5 * quad - 0.5 * std::log(det) - std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(log_marginal_likelihood(m), expected, 1e-10);
}

TEST(GpLml, PermutationInvariant) {
  auto in = random_instance(11);
  const KernelConfig cfg{std::vector<double>(in.bounds.size(), 0.4), 1.2, 1e-3};
  const auto a = GpModel::with_config(in.x, in.y, in.bounds, cfg);
  std::reverse(in.x.begin(), in.x.end());
  std::reverse(in.y.begin(), in.y.end());
  const auto b = GpModel::with_config(in.x, in.y, in.bounds, cfg);
  EXPECT_NEAR(log_marginal_likelihood(a), log_marginal_likelihood(b), 1e-9);
}

TEST(GpLml, DuplicateObservationIsReproducible) {
  auto in = random_instance(12);
  const KernelConfig cfg{std::vector<double>(in.bounds.size(), 0.4), 1.2, 1e-2};
  const double before = log_marginal_likelihood(GpModel::with_config(in.x, in.y, in.bounds, cfg));
  in.x.push_back(in.x.front());
  in.y.push_back(in.y.front());
  const double a = log_marginal_likelihood(GpModel::with_config(in.x, in.y, in.bounds, cfg));
  const double b = log_marginal_likelihood(GpModel::with_config(in.x, in.y, in.bounds, cfg));
  EXPECT_NE(a, before);
  EXPECT_EQ(a, b);
}

TEST(GpLml, FitImprovesOnDefaultHyperparameters) {
  const auto in = random_instance(3);
  const auto fitted = fit(in.x, in.y, in.bounds);
  const auto naive = GpModel::with_config(in.x, in.y, in.bounds,
                                          {std::vector<double>(in.bounds.size(), 5.0), 100.0, 1.0});
  EXPECT_GT(log_marginal_likelihood(fitted), log_marginal_likelihood(naive));
}

TEST(GpProperties, KernelSymmetryAndGramPsd) {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t d = 1 + rng.below(5);
    KernelConfig cfg;
    for (std::size_t j = 0; j < d; ++j) cfg.length_scales.push_back(rng.uniform(0.05, 2.0));
    cfg.signal_variance = rng.uniform(0.1, 10.0);
    std::vector<Point> pts(12, Point(d));
    for (auto& p : pts)
      for (auto& v : p) v = rng.uniform();
    Eigen::MatrixXd k(12, 12);
    for (int a = 0; a < 12; ++a) {
      for (int b = 0; b < 12; ++b) {
        k(a, b) = se_kernel(cfg, pts[a], pts[b]);
        EXPECT_EQ(se_kernel(cfg, pts[a], pts[b]), se_kernel(cfg, pts[b], pts[a]));
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(GpProperties, PosteriorStdBoundedByPriorAndOrderInvariant) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    auto in = random_instance(seed);
    const auto m = fit(in.x, in.y, in.bounds);
    Rng rng(seed + 1);
    std::vector<Point> qs;
    for (int i = 0; i < 30; ++i) {
      Point q;
      for (const auto& b : in.bounds) q.push_back(rng.uniform(b.lower, b.upper));
      qs.push_back(q);
    }
    const auto post = predict(m, qs);
    for (const auto& p : post) EXPECT_LE(p.std, m.prior_std() + 1e-8);

    auto shuffled = in;
    std::vector<std::size_t> perm(in.x.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.x[i] = in.x[perm[i]];
      shuffled.y[i] = in.y[perm[i]];
    }
    const auto m2 = GpModel::with_config(shuffled.x, shuffled.y, shuffled.bounds, m.config());
    const auto post2 = predict(m2, qs);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      EXPECT_NEAR(post[i].mean, post2[i].mean, 1e-8);
      EXPECT_NEAR(post[i].std, post2[i].std, 1e-8);
    }
  }
}

TEST(GpProperties, MatchesDenseOracleOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto in = random_instance(1000 + seed);
    const auto m = fit(in.x, in.y, in.bounds);
    const auto g = oracle::from_model(m);
    EXPECT_NEAR(log_marginal_likelihood(m), g.lml(), 1e-8);
    Rng rng(seed);
    for (int i = 0; i < 10; ++i) {
      Point q, u;
      for (const auto& b : in.bounds) {
        q.push_back(rng.uniform(b.lower, b.upper));
        u.push_back((q.back() - b.lower) / b.width());
      }
      const auto p = predict_one(m, q);
      const auto r = g.posterior(u);
      EXPECT_NEAR(p.mean, r.first, 1e-8);
      EXPECT_NEAR(p.std, r.second, 1e-8);
    }
  }
}

}  // namespace
}  // namespace xbo
