#pragma once

// Gaussian-process regression with a squared-exponential ARD kernel over
// inputs min-max normalised to [0,1] by the search-space bounds.

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

namespace xbo {

using Point = std::vector<double>;

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double width() const noexcept { return upper - lower; }
  bool contains(double v) const noexcept { return v >= lower && v <= upper; }
};

struct KernelConfig {
  std::vector<double> length_scales;  // normalised units, one per dimension
  double signal_variance = 1.0;
  double noise_variance = 0.0;
};

/// k(u, v) on already-normalised inputs.
double se_kernel(const KernelConfig& cfg, std::span<const double> u, std::span<const double> v);

struct Posterior {
  double mean = 0.0;
  double std = 0.0;
};

struct FitOptions {
  /// Lower bound on the noise variance relative to Var(y). Zero pins the noise at 0.
  double noise_floor = 1e-6;
  /// Upper bound on the noise variance relative to Var(y).
  double noise_ceiling = 1e-4;
  /// Search range for length scales, in normalised input units.
  double min_length_scale = 0.2;
  double max_length_scale = 20.0;
  /// Coordinate-refinement sweeps after the multi-start grid.
  int max_sweeps = 40;
};

struct PredictStats {
  std::size_t clipped = 0;  // query points clipped into the bounds
};

class GpModel {
 public:
  GpModel() = default;

  /// Builds and factorises a model with fixed hyperparameters. Inputs are in
  /// natural units and get normalised with `bounds`.
  static GpModel with_config(const std::vector<Point>& x, std::span<const double> y,
                             std::vector<Interval> bounds, KernelConfig config);

  bool fitted() const noexcept { return fitted_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(y_.size()); }
  std::size_t dims() const noexcept { return bounds_.size(); }

  const KernelConfig& config() const noexcept { return config_; }
  const std::vector<Interval>& bounds() const noexcept { return bounds_; }
  /// Training inputs, normalised, one row per point.
  const Eigen::MatrixXd& x_normalized() const noexcept { return x_; }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  double prior_mean() const noexcept { return prior_mean_; }
  double prior_std() const;
  /// Diagonal jitter actually added on top of the noise variance.
  double jitter() const noexcept { return jitter_; }
  const Eigen::MatrixXd& cholesky_factor() const noexcept { return chol_; }
  const Eigen::VectorXd& alpha() const noexcept { return alpha_; }

  Point normalize(std::span<const double> x, bool* clipped = nullptr) const;

 private:
  friend GpModel fit(const std::vector<Point>&, std::span<const double>, const std::vector<Interval>&,
                     const FitOptions&);

  bool fitted_ = false;
  std::vector<Interval> bounds_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  KernelConfig config_;
  double prior_mean_ = 0.0;
  double jitter_ = 0.0;
  Eigen::MatrixXd chol_;  // lower triangular, K + (noise + jitter) I = L L^T
  Eigen::VectorXd alpha_;  // (K + ...)^-1 (y - prior_mean)
};

/// Sets hyperparameters by maximising the log marginal likelihood over a 4x4
/// log grid of (length scale, signal variance) followed by coordinate refinement.
/// Fully deterministic.
GpModel fit(const std::vector<Point>& x, std::span<const double> y, const std::vector<Interval>& bounds,
            const FitOptions& options = {});

std::vector<Posterior> predict(const GpModel& model, const std::vector<Point>& queries,
                               PredictStats* stats = nullptr);
Posterior predict_one(const GpModel& model, std::span<const double> query);

/// Posterior at an already-normalised point (no clipping).
Posterior predict_normalized(const GpModel& model, std::span<const double> u);

double log_marginal_likelihood(const GpModel& model);

}  // namespace xbo
