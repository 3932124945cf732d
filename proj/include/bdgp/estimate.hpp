#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdgp/grid.hpp"
#include "bdgp/kernel.hpp"
#include "bdgp/partition.hpp"

namespace bdgp {

/// Per-axis Gaussian std of a point spread function, in target-grid pixels:
/// fwhm / (target_px * 2 sqrt(2 ln 2)). Throws ArgumentError on non-positive
/// input.
double sigma_blur_from_fwhm(double fwhm_m, double native_px_m, double target_px_m);

struct ParamBounds {
  double ell_min = 0.3;
  double ell_max = 100.0;
  double sigma_min = 1e-4;
  double sigma_max = 1e4;
};

struct MLEConfig {
  double nugget = 1e-8;
  int max_iter = 200;
  /// Absolute, on the projected gradient in (log sigma, log ell). With the
  /// default nugget a few hundred pixels already push the gradient's rounding
  /// noise to ~1e-5, so tighter values rarely converge.
  double grad_tol = 1e-3;
  /// Starting sigma; the sample std of the region residuals when unset.
  std::optional<double> init_sigma;
  double init_ell = 3.0;
  ParamBounds bounds;

  void validate() const;
};

/// Residuals of one region: pixel coordinates plus one column per time slice.
struct RegionData {
  std::vector<std::size_t> pixels;
  Eigen::Matrix<double, Eigen::Dynamic, 2> coords;  // (row, col) in pixels
  Eigen::MatrixXd y;                                // n_pixels x n_times

  std::size_t n_pixels() const noexcept { return pixels.size(); }
  std::size_t n_times() const noexcept { return static_cast<std::size_t>(y.cols()); }
};

/// Gathers region `id` from the chosen stack layers, keeping pixels that are
/// valid in every chosen layer.
RegionData region_data(const Partition& p, RegionId id, const RasterStack& residuals,
                       std::span<const std::size_t> layers);

/// Builds RegionData directly from coordinates and per-time vectors.
RegionData region_data(std::span<const std::size_t> pixels, const GridGeom& geom,
                       const std::vector<Eigen::VectorXd>& y_stack);

/// Negative log-likelihood of independent time slices under N(0, K + nugget I)
/// with K the SE covariance of the region pixels.
double neg_log_lik_region(const RegionData& data, double sigma, double ell, double nugget);

struct NllGrad {
  double value;
  Eigen::Vector2d grad;  // d/d log sigma, d/d log ell
};

/// Value and analytic gradient in (log sigma, log ell). Throws NumericError
/// when the covariance is not positive definite.
NllGrad neg_log_lik_region_grad(const RegionData& data, double log_sigma, double log_ell, double nugget);

struct RegionFit {
  RegionId region = 0;
  double sigma = 0.0;
  double ell = 0.0;
  double nll = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  std::size_t n_pixels = 0;
  std::size_t n_times = 0;
  /// False for single-pixel regions, where ell stays at its initial value.
  bool ell_identifiable = true;
  /// Set when the region had no usable data; sigma/ell are then the initial values.
  bool degenerate = false;
  std::string note;
};

/// Quasi-Newton maximum likelihood over (log sigma, log ell) within the
/// configured bounds. Deterministic for a given input and config.
RegionFit fit_region_mle(const RegionData& data, const MLEConfig& cfg);

/// Fits every region id 0..N (background included), optionally in parallel.
std::vector<RegionFit> fit_all_regions(const Partition& p, const RasterStack& residuals,
                                       std::span<const std::size_t> layers, const MLEConfig& cfg,
                                       unsigned threads = 1);

/// Variance inflation used to undo the blur in the region variance:
/// (ell^2 + b^2) / ell^2 as derived from the spectral argument, or
/// (ell^2 + 2 b^2) / ell^2 matching the zero-lag double-blurred covariance.
enum class InflationVariant { Spectral, DoubleBlur };

InflationVariant inflation_variant_from_name(const std::string& name);
std::string to_string(InflationVariant v);

struct BlurredSigmaEstimate {
  double sigma = 0.0;
  double sample_variance = 0.0;
  /// The bracket (sample variance - sensor variance) was <= 0; sigma is the floor.
  bool floored = false;
};

/// sigma_hat^2 = (Var_hat(y) - sigma_sensor^2) * inflation, with Var_hat the
/// unbiased sample variance. Throws ArgumentError with fewer than 2 values.
BlurredSigmaEstimate estimate_blurred_sigma(std::span<const double> y_region, double ell, double b,
                                            double sigma_sensor, InflationVariant variant = InflationVariant::Spectral,
                                            double sigma_floor = ParamBounds{}.sigma_min);

/// Median; even lengths average the middle pair. Throws ArgumentError on an
/// empty list.
double aggregate_sigma_estimates(std::span<const double> estimates);

nlohmann::ordered_json fit_report_json(const std::vector<RegionFit>& fits);

}  // namespace bdgp
