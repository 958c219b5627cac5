#include "xbo/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "xbo/errors.hpp"

namespace xbo {

namespace {

constexpr double kJitterStart = 1e-8;
constexpr double kJitterMax = 1e-4;

struct Factorization {
  Eigen::MatrixXd chol;
  Eigen::VectorXd alpha;
  double jitter = 0.0;
};

Eigen::MatrixXd gram(const Eigen::MatrixXd& x, const KernelConfig& cfg) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Eigen::ArrayXd inv_l(d);
  for (Eigen::Index j = 0; j < d; ++j) inv_l(j) = 1.0 / cfg.length_scales[j];
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    k(a, a) = cfg.signal_variance;
    for (Eigen::Index b = 0; b < a; ++b) {
      const double r2 = ((x.row(a) - x.row(b)).array().transpose() * inv_l).square().sum();
      k(a, b) = k(b, a) = cfg.signal_variance * std::exp(-0.5 * r2);
    }
  }
  return k;
}

// Jitter is relative to the signal variance and doubled until the Cholesky
// factorisation succeeds.
bool try_factorize(const Eigen::MatrixXd& x, const Eigen::VectorXd& yc, const KernelConfig& cfg,
                   Factorization& out, double* worst_ratio = nullptr) {
  Eigen::MatrixXd k = gram(x, cfg);
  for (double rel = kJitterStart; rel <= kJitterMax * (1.0 + 1e-12); rel *= 2.0) {
    const double jitter = rel * cfg.signal_variance;
    Eigen::MatrixXd kk = k;
    kk.diagonal().array() += cfg.noise_variance + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kk);
    if (llt.info() == Eigen::Success) {
      out.chol = llt.matrixL();
      out.alpha = llt.solve(yc);
      out.jitter = jitter;
      return true;
    }
  }
  if (worst_ratio) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    *worst_ratio = ev.maxCoeff() / std::max(std::abs(ev.minCoeff()), std::numeric_limits<double>::min());
  }
  return false;
}

double lml_from(const Factorization& f, const Eigen::VectorXd& yc) {
  const double n = static_cast<double>(yc.size());
  return -0.5 * yc.dot(f.alpha) - f.chol.diagonal().array().log().sum() -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

Eigen::MatrixXd to_matrix(const std::vector<Point>& x, const std::vector<Interval>& bounds) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(bounds.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != bounds.size()) throw DomainError("training point dimension does not match bounds");
    for (std::size_t j = 0; j < bounds.size(); ++j) {
      const double w = bounds[j].width();
      m(i, j) = w > 0.0 ? (x[i][j] - bounds[j].lower) / w : 0.0;
    }
  }
  return m;
}

void check_bounds(const std::vector<Interval>& bounds) {
  if (bounds.empty()) throw DomainError("at least one input dimension is required");
  for (const auto& b : bounds) {
    if (!(b.lower <= b.upper)) throw DomainError("bounds must satisfy lower <= upper");
  }
}

}  // namespace

double se_kernel(const KernelConfig& cfg, std::span<const double> u, std::span<const double> v) {
  double r2 = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double d = (u[j] - v[j]) / cfg.length_scales[j];
    r2 += d * d;
  }
  return cfg.signal_variance * std::exp(-0.5 * r2);
}

double GpModel::prior_std() const { return std::sqrt(config_.signal_variance); }

Point GpModel::normalize(std::span<const double> x, bool* clipped) const {
  Point u(bounds_.size());
  bool any = false;
  for (std::size_t j = 0; j < bounds_.size(); ++j) {
    const double w = bounds_[j].width();
    double v = w > 0.0 ? (x[j] - bounds_[j].lower) / w : 0.0;
    if (v < 0.0 || v > 1.0) {
      v = std::clamp(v, 0.0, 1.0);
      any = true;
    }
    u[j] = v;
  }
  if (clipped) *clipped = any;
  return u;
}

GpModel GpModel::with_config(const std::vector<Point>& x, std::span<const double> y, std::vector<Interval> bounds,
                             KernelConfig config) {
  check_bounds(bounds);
  if (x.empty() || x.size() != y.size()) throw DomainError("need matching, non-empty x and y");
  if (config.length_scales.size() != bounds.size()) throw ConfigError("one length scale per dimension required");
  if (std::any_of(config.length_scales.begin(), config.length_scales.end(), [](double l) { return !(l > 0.0); }) ||
      !(config.signal_variance > 0.0) || !(config.noise_variance >= 0.0)) {
    throw ConfigError("kernel hyperparameters must be positive (noise non-negative)");
  }
  GpModel m;
  m.bounds_ = std::move(bounds);
  m.x_ = to_matrix(x, m.bounds_);
  m.y_ = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  m.prior_mean_ = m.y_.mean();
  m.config_ = std::move(config);
  Factorization f;
  double ratio = 0.0;
  const Eigen::VectorXd yc = m.y_.array() - m.prior_mean_;
  if (!try_factorize(m.x_, yc, m.config_, f, &ratio)) {
    std::ostringstream os;
    os << "covariance not positive definite after jitter " << kJitterMax
       << "; eigenvalue ratio max/|min| = " << ratio;
    throw NumericalError(os.str());
  }
  m.chol_ = std::move(f.chol);
  m.alpha_ = std::move(f.alpha);
  m.jitter_ = f.jitter;
  m.fitted_ = true;
  return m;
}

GpModel fit(const std::vector<Point>& x, std::span<const double> y, const std::vector<Interval>& bounds,
            const FitOptions& options) {
  check_bounds(bounds);
  if (x.size() != y.size()) throw DomainError("x and y must have the same length");
  if (std::any_of(y.begin(), y.end(), [](double v) { return !std::isfinite(v); })) {
    throw DomainError("targets must be finite");
  }
  const Eigen::MatrixXd xm = to_matrix(x, bounds);
  const Eigen::Index n = xm.rows();
  const Eigen::Index d = xm.cols();

  bool distinct = false;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) {
      if (xm.row(a) == xm.row(b)) {
        if (y[a] != y[b] && options.noise_floor <= 0.0) {
          throw FitError("duplicate inputs with conflicting targets and zero noise; set a positive noise floor");
        }
      } else {
        distinct = true;
      }
    }
  }
  if (!distinct) throw FitError("fit needs at least two distinct training points");

  Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const double mean = yv.mean();
  const Eigen::VectorXd yc = yv.array() - mean;
  double var = yc.squaredNorm() / static_cast<double>(n);
  const double scale = var > 0.0 ? var : 1.0;

  // Dimensions on which every training point agrees carry no information.
  std::vector<bool> active(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    active[j] = xm.col(j).maxCoeff() > xm.col(j).minCoeff();
  }

  const bool fit_noise = options.noise_floor > 0.0;
  const double noise_lo = fit_noise ? options.noise_floor * scale : 0.0;

  // theta = [log l_1..l_d, log s2, log noise]
  const std::size_t np = static_cast<std::size_t>(d) + 2;
  std::vector<double> lo(np), hi(np);
  for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) {
    lo[j] = std::log(options.min_length_scale);
    hi[j] = std::log(options.max_length_scale);
  }
  lo[d] = std::log(1e-3 * scale);
  hi[d] = std::log(1e3 * scale);
  lo[d + 1] = fit_noise ? std::log(noise_lo) : 0.0;
  hi[d + 1] = fit_noise ? std::log(std::max(options.noise_ceiling, options.noise_floor) * scale) : 0.0;

  auto config_of = [&](const std::vector<double>& th) {
    KernelConfig c;
    c.length_scales.resize(static_cast<std::size_t>(d));
    for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) c.length_scales[j] = std::exp(th[j]);
    c.signal_variance = std::exp(th[d]);
    c.noise_variance = fit_noise ? std::exp(th[d + 1]) : 0.0;
    return c;
  };
  auto objective = [&](const std::vector<double>& th) {
    Factorization f;
    if (!try_factorize(xm, yc, config_of(th), f)) return -std::numeric_limits<double>::infinity();
    const double v = lml_from(f, yc);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  };

  std::vector<double> best(np);
  double best_val = -std::numeric_limits<double>::infinity();
  const double noise_start = fit_noise ? std::max(noise_lo, 1e-3 * scale) : 1.0;
  for (double l : {0.2, 0.5, 1.0, 3.0}) {
    for (double s : {0.2, 1.0, 5.0, 25.0}) {
      std::vector<double> th(np);
      for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) th[j] = std::clamp(std::log(l), lo[j], hi[j]);
      th[d] = std::log(s * scale);
      th[d + 1] = fit_noise ? std::log(noise_start) : 0.0;
      const double v = objective(th);
      if (v > best_val) {
        best_val = v;
        best = th;
      }
    }
  }

  double step = 1.0;
  for (int sweep = 0; sweep < options.max_sweeps && step > 0.03; ++sweep) {
    bool improved = false;
    for (std::size_t k = 0; k < np; ++k) {
      if (k < static_cast<std::size_t>(d) && !active[k]) continue;
      if (k == np - 1 && !fit_noise) continue;
      for (double dir : {1.0, -1.0}) {
        std::vector<double> th = best;
        th[k] = std::clamp(th[k] + dir * step, lo[k], hi[k]);
        if (th[k] == best[k]) continue;
        const double v = objective(th);
        if (v > best_val + 1e-12) {
          best_val = v;
          best = std::move(th);
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  if (!std::isfinite(best_val)) {
    throw NumericalError("no hyperparameter setting produced a positive definite covariance");
  }

  KernelConfig cfg = config_of(best);
  for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) {
    if (!active[j]) cfg.length_scales[j] = 1.0;
  }
  return GpModel::with_config(x, y, bounds, std::move(cfg));
}

Posterior predict_normalized(const GpModel& model, std::span<const double> u) {
  if (!model.fitted()) throw UsageError("predict called on an unfit model");
  const auto& cfg = model.config();
  const auto& x = model.x_normalized();
  const Eigen::Index n = x.rows();
  Eigen::VectorXd k(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double dd = (u[j] - x(i, j)) / cfg.length_scales[j];
      r2 += dd * dd;
    }
    k(i) = cfg.signal_variance * std::exp(-0.5 * r2);
  }
  const double mean = model.prior_mean() + k.dot(model.alpha());
  model.cholesky_factor().triangularView<Eigen::Lower>().solveInPlace(k);
  const double var = cfg.signal_variance - k.squaredNorm();
  return {mean, std::sqrt(std::max(var, 0.0))};
}

Posterior predict_one(const GpModel& model, std::span<const double> query) {
  if (!model.fitted()) throw UsageError("predict called on an unfit model");
  if (query.size() != model.dims()) throw DomainError("query dimension does not match the model");
  const Point u = model.normalize(query);
  return predict_normalized(model, u);
}

std::vector<Posterior> predict(const GpModel& model, const std::vector<Point>& queries, PredictStats* stats) {
  if (!model.fitted()) throw UsageError("predict called on an unfit model");
  std::vector<Posterior> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.size() != model.dims()) throw DomainError("query dimension does not match the model");
    bool clipped = false;
    const Point u = model.normalize(q, &clipped);
    if (clipped && stats) ++stats->clipped;
    out.push_back(predict_normalized(model, u));
  }
  return out;
}

double log_marginal_likelihood(const GpModel& model) {
  if (!model.fitted()) throw UsageError("log_marginal_likelihood called on an unfit model");
  const Eigen::VectorXd yc = model.y().array() - model.prior_mean();
  Factorization f{model.cholesky_factor(), model.alpha(), model.jitter()};
  return lml_from(f, yc);
}

}  // namespace xbo
