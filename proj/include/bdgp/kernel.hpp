#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "bdgp/grid.hpp"
#include "bdgp/partition.hpp"

namespace bdgp {

/// Per-region squared-exponential parameters, indexed by region id with the
/// background at index 0. `sigma` is in field units, `ell` in grid pixels.
struct RegionParams {
  std::vector<double> sigma;
  std::vector<double> ell;

  std::size_t size() const noexcept { return sigma.size(); }
  /// Throws ArgumentError unless there is a strictly positive (sigma, ell)
  /// pair for every id 0..n_regions.
  void validate(RegionId n_regions) const;
};

/// Gaussian change of support plus white sensor noise. `sigma_blur_px` is the
/// per-axis standard deviation of the blur density in grid pixels.
struct BlurSpec {
  double sigma_blur_px = 0.0;
  double sigma_sensor = 0.0;
};

/// sigma^2 exp(-d^2 / (2 ell^2)).
double k_se(double d, double sigma, double ell);

/// Block-diagonal kernel between two pixel indices: k_se at the owning
/// region's parameters when both share a region, exactly 0 otherwise.
double k_bdgp(std::size_t x, std::size_t x_prime, const Partition& p, const RegionParams& theta);

/// Covariance between the latent field and its Gaussian-blurred version at
/// lag d: the SE kernel convolved once with an isotropic 2-D Gaussian of
/// per-axis std b.
double k_blurred(double d, double sigma, double ell, double b);

/// Covariance of the blurred field with itself: the SE kernel convolved with
/// the blur density on both arguments.
double k_double_blurred(double d, double sigma, double ell, double b);

enum class CovMode { Latent, DoubleBlurred };

/// Dense symmetric covariance over an ordered pixel list, nugget included on
/// the diagonal, with its Cholesky factor. Construction fails with
/// NumericError when the matrix is not positive definite.
class CovMatrix {
 public:
  CovMatrix(std::vector<std::size_t> pixels, Eigen::MatrixXd matrix, double nugget);

  std::span<const std::size_t> pixels() const noexcept { return pixels_; }
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  double nugget() const noexcept { return nugget_; }
  const Eigen::LLT<Eigen::MatrixXd>& cholesky() const noexcept { return llt_; }
  Eigen::Index dim() const noexcept { return matrix_.rows(); }
  double log_det() const;

 private:
  std::vector<std::size_t> pixels_;
  Eigen::MatrixXd matrix_;
  double nugget_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Assembles the covariance of `pixels` (indices into `geom`) under the
/// block-diagonal kernel. In DoubleBlurred mode same-region entries use
/// k_double_blurred with blur `b`; entries across regions are 0 in both modes.
CovMatrix assemble_cov(std::span<const std::size_t> pixels, const GridGeom& geom,
                       std::span<const RegionId> region_of, const RegionParams& theta, CovMode mode, double b,
                       double nugget);

Eigen::VectorXd chol_solve(const CovMatrix& k, const Eigen::VectorXd& rhs);
Eigen::MatrixXd chol_solve(const CovMatrix& k, const Eigen::MatrixXd& rhs);

/// Squared centre-to-centre distance between two pixels, in pixels^2.
double pixel_dist2(const GridGeom& g, std::size_t a, std::size_t b) noexcept;

}  // namespace bdgp
