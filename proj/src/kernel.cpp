#include "bdgp/kernel.hpp"

#include <cmath>
#include <string>

#include "bdgp/error.hpp"

namespace bdgp {

namespace {

void check_sigma_ell(double sigma, double ell) {
  if (!(sigma > 0.0) || !(ell > 0.0)) throw ArgumentError("kernel sigma and ell must be positive");
}

void check_blur(double b) {
  if (!(b >= 0.0) || !std::isfinite(b)) throw ArgumentError("blur std must be non-negative");
}

// Gaussian-SE convolutions stay squared-exponential: per blurred argument the
// squared length scale grows by b^2 and each of the two axes scales the
// amplitude by ell / sqrt(ell^2 + b^2).
double smoothed_se(double d2, double sigma, double ell, double extra_var) {
  const double l2 = ell * ell;
  const double s2 = l2 + extra_var;
  return sigma * sigma * (l2 / s2) * std::exp(-d2 / (2.0 * s2));
}

}  // namespace

void RegionParams::validate(RegionId n_regions) const {
  const std::size_t need = static_cast<std::size_t>(n_regions) + 1;
  if (sigma.size() < need || ell.size() < need)
    throw ArgumentError("parameters missing for some region (need ids 0.." + std::to_string(n_regions) + ")");
  for (std::size_t r = 0; r < need; ++r) {
    if (!(sigma[r] > 0.0) || !(ell[r] > 0.0) || !std::isfinite(sigma[r]) || !std::isfinite(ell[r]))
      throw ArgumentError("non-positive parameters for region " + std::to_string(r));
  }
}

double k_se(double d, double sigma, double ell) {
  check_sigma_ell(sigma, ell);
  return sigma * sigma * std::exp(-(d * d) / (2.0 * ell * ell));
}

double k_bdgp(std::size_t x, std::size_t x_prime, const Partition& p, const RegionParams& theta) {
  const RegionId r = p.label(x);
  if (p.label(x_prime) != r) return 0.0;
  const double d2 = pixel_dist2(p.geom(), x, x_prime);
  const double s = theta.sigma.at(r);
  const double l = theta.ell.at(r);
  check_sigma_ell(s, l);
  return s * s * std::exp(-d2 / (2.0 * l * l));
}

double k_blurred(double d, double sigma, double ell, double b) {
  check_sigma_ell(sigma, ell);
  check_blur(b);
  return smoothed_se(d * d, sigma, ell, b * b);
}

double k_double_blurred(double d, double sigma, double ell, double b) {
  check_sigma_ell(sigma, ell);
  check_blur(b);
  return smoothed_se(d * d, sigma, ell, 2.0 * b * b);
}

double pixel_dist2(const GridGeom& g, std::size_t a, std::size_t b) noexcept {
  const double dr = static_cast<double>(g.row_of(a)) - static_cast<double>(g.row_of(b));
  const double dc = static_cast<double>(g.col_of(a)) - static_cast<double>(g.col_of(b));
  return dr * dr + dc * dc;
}

CovMatrix::CovMatrix(std::vector<std::size_t> pixels, Eigen::MatrixXd matrix, double nugget)
    : pixels_(std::move(pixels)), matrix_(std::move(matrix)), nugget_(nugget), llt_(matrix_) {
  if (llt_.info() != Eigen::Success) {
    throw NumericError("covariance matrix of " + std::to_string(matrix_.rows()) +
                       " pixels is not positive definite (nugget " + std::to_string(nugget_) + ")");
  }
}

double CovMatrix::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

CovMatrix assemble_cov(std::span<const std::size_t> pixels, const GridGeom& geom,
                       std::span<const RegionId> region_of, const RegionParams& theta, CovMode mode, double b,
                       double nugget) {
  if (pixels.empty()) throw ArgumentError("cannot assemble a covariance over zero pixels");
  if (!(nugget >= 0.0)) throw ArgumentError("nugget must be non-negative");
  check_blur(b);
  const double extra = mode == CovMode::DoubleBlurred ? 2.0 * b * b : 0.0;
  const auto n = static_cast<Eigen::Index>(pixels.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t pi = pixels[static_cast<std::size_t>(i)];
    const RegionId ri = region_of[pi];
    const double s = theta.sigma.at(ri);
    const double l = theta.ell.at(ri);
    check_sigma_ell(s, l);
    for (Eigen::Index j = 0; j <= i; ++j) {
      const std::size_t pj = pixels[static_cast<std::size_t>(j)];
      const double v = region_of[pj] == ri ? smoothed_se(pixel_dist2(geom, pi, pj), s, l, extra) : 0.0;
      k(i, j) = v;
      k(j, i) = v;
    }
    k(i, i) += nugget;
  }
  return CovMatrix({pixels.begin(), pixels.end()}, std::move(k), nugget);
}

Eigen::VectorXd chol_solve(const CovMatrix& k, const Eigen::VectorXd& rhs) {
  if (rhs.size() != k.dim()) throw DimensionError("right-hand side length differs from matrix size");
  return k.cholesky().solve(rhs);
}

Eigen::MatrixXd chol_solve(const CovMatrix& k, const Eigen::MatrixXd& rhs) {
  if (rhs.rows() != k.dim()) throw DimensionError("right-hand side rows differ from matrix size");
  return k.cholesky().solve(rhs);
}

}  // namespace bdgp
