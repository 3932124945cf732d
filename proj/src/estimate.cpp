#include "bdgp/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bdgp/error.hpp"
#include "bdgp/optimize.hpp"
#include "bdgp/parallel.hpp"

namespace bdgp {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Eigen::MatrixXd squared_distances(const RegionData& d) {
  const auto n = static_cast<Eigen::Index>(d.n_pixels());
  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double dr = d.coords(i, 0) - d.coords(j, 0);
      const double dc = d.coords(i, 1) - d.coords(j, 1);
      d2(i, j) = d2(j, i) = dr * dr + dc * dc;
    }
  }
  return d2;
}

// Unit-variance SE correlation; K = sigma^2 * corr + nugget * I.
Eigen::MatrixXd se_correlation(const Eigen::MatrixXd& d2, double ell) {
  return (-d2.array() / (2.0 * ell * ell)).exp().matrix();
}

double sample_std(const Eigen::MatrixXd& y) {
  const auto n = static_cast<double>(y.size());
  if (n < 2) return std::sqrt(y.squaredNorm() / std::max(n, 1.0));
  const double mean = y.mean();
  return std::sqrt((y.array() - mean).square().sum() / (n - 1));
}

}  // namespace

double sigma_blur_from_fwhm(double fwhm_m, double native_px_m, double target_px_m) {
  if (!(fwhm_m > 0.0) || !(native_px_m > 0.0) || !(target_px_m > 0.0))
    throw ArgumentError("FWHM and pixel sizes must be positive");
  const double fwhm_per_sigma = 2.0 * std::sqrt(2.0 * std::numbers::ln2);
  const double sigma_native_px = (fwhm_m / native_px_m) / fwhm_per_sigma;
  return sigma_native_px * (native_px_m / target_px_m);
}

void MLEConfig::validate() const {
  const auto& b = bounds;
  if (!(b.ell_min > 0.0) || !(b.ell_min < b.ell_max) || !(b.sigma_min > 0.0) || !(b.sigma_min < b.sigma_max))
    throw ArgumentError("parameter bounds must be positive with min < max");
  if (!(nugget >= 0.0)) throw ArgumentError("nugget must be non-negative");
  if (max_iter < 1) throw ArgumentError("max_iter must be at least 1");
  if (!(grad_tol > 0.0)) throw ArgumentError("grad_tol must be positive");
  if (!(init_ell > 0.0)) throw ArgumentError("init_ell must be positive");
  if (init_sigma && !(*init_sigma > 0.0)) throw ArgumentError("init_sigma must be positive");
}

RegionData region_data(const Partition& p, RegionId id, const RasterStack& residuals,
                       std::span<const std::size_t> layers) {
  if (!compatible(p.geom(), residuals.geom())) throw ArgumentError("partition and residual geometries differ");
  for (std::size_t l : layers) {
    if (l >= residuals.size()) throw ArgumentError("layer index " + std::to_string(l) + " out of range");
  }
  RegionData d;
  for (std::size_t idx : p.region_pixels(id)) {
    const bool ok = std::all_of(layers.begin(), layers.end(), [&](std::size_t l) { return residuals[l].is_valid(idx); });
    if (ok) d.pixels.push_back(idx);
  }
  const auto n = static_cast<Eigen::Index>(d.pixels.size());
  const auto t = static_cast<Eigen::Index>(layers.size());
  d.coords.resize(n, 2);
  d.y.resize(n, t);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t idx = d.pixels[static_cast<std::size_t>(i)];
    d.coords(i, 0) = static_cast<double>(p.geom().row_of(idx));
    d.coords(i, 1) = static_cast<double>(p.geom().col_of(idx));
    for (Eigen::Index k = 0; k < t; ++k) d.y(i, k) = residuals[layers[static_cast<std::size_t>(k)]][idx];
  }
  return d;
}

RegionData region_data(std::span<const std::size_t> pixels, const GridGeom& geom,
                       const std::vector<Eigen::VectorXd>& y_stack) {
  RegionData d;
  d.pixels.assign(pixels.begin(), pixels.end());
  const auto n = static_cast<Eigen::Index>(pixels.size());
  d.coords.resize(n, 2);
  d.y.resize(n, static_cast<Eigen::Index>(y_stack.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    d.coords(i, 0) = static_cast<double>(geom.row_of(pixels[static_cast<std::size_t>(i)]));
    d.coords(i, 1) = static_cast<double>(geom.col_of(pixels[static_cast<std::size_t>(i)]));
  }
  for (std::size_t k = 0; k < y_stack.size(); ++k) {
    if (y_stack[k].size() != n) throw DimensionError("residual vector length differs from region size");
    d.y.col(static_cast<Eigen::Index>(k)) = y_stack[k];
  }
  return d;
}

NllGrad neg_log_lik_region_grad(const RegionData& data, double log_sigma, double log_ell, double nugget) {
  const auto n = static_cast<Eigen::Index>(data.n_pixels());
  const auto t = static_cast<double>(data.n_times());
  if (n == 0 || data.n_times() == 0) throw ArgumentError("likelihood needs at least one pixel and one time slice");
  const double s2 = std::exp(2.0 * log_sigma);
  const double ell = std::exp(log_ell);

  const Eigen::MatrixXd d2 = squared_distances(data);
  const Eigen::MatrixXd corr = se_correlation(d2, ell);
  Eigen::MatrixXd k = s2 * corr;
  k.diagonal().array() += nugget;

  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw NumericError("region covariance is not positive definite");
  const Eigen::MatrixXd alpha = llt.solve(data.y);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = (data.y.array() * alpha.array()).sum();

  NllGrad out;
  out.value = 0.5 * quad + 0.5 * t * log_det + 0.5 * t * static_cast<double>(n) * kLog2Pi;

  // d NLL = 0.5 * sum_ij W_ij dK_ij with W = T K^-1 - alpha alpha^T.
  const Eigen::MatrixXd k_inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd w = t * k_inv - alpha * alpha.transpose();
  const Eigen::MatrixXd dk_sigma = 2.0 * s2 * corr;
  const Eigen::MatrixXd dk_ell = s2 * (corr.array() * d2.array() / (ell * ell)).matrix();
  out.grad(0) = 0.5 * (w.array() * dk_sigma.array()).sum();
  out.grad(1) = 0.5 * (w.array() * dk_ell.array()).sum();
  return out;
}

double neg_log_lik_region(const RegionData& data, double sigma, double ell, double nugget) {
  if (!(sigma > 0.0) || !(ell > 0.0)) throw ArgumentError("sigma and ell must be positive");
  const auto n = static_cast<Eigen::Index>(data.n_pixels());
  const auto t = static_cast<double>(data.n_times());
  if (n == 0 || data.n_times() == 0) throw ArgumentError("likelihood needs at least one pixel and one time slice");
  Eigen::MatrixXd k = sigma * sigma * se_correlation(squared_distances(data), ell);
  k.diagonal().array() += nugget;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw NumericError("region covariance is not positive definite");
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = (data.y.array() * llt.solve(data.y).array()).sum();
  return 0.5 * quad + 0.5 * t * log_det + 0.5 * t * static_cast<double>(n) * kLog2Pi;
}

RegionFit fit_region_mle(const RegionData& data, const MLEConfig& cfg) {
  cfg.validate();
  const auto& b = cfg.bounds;
  RegionFit fit;
  fit.n_pixels = data.n_pixels();
  fit.n_times = data.n_times();
  const double s0 = std::clamp(cfg.init_sigma.value_or(sample_std(data.y)), b.sigma_min, b.sigma_max);
  const double l0 = std::clamp(cfg.init_ell, b.ell_min, b.ell_max);
  fit.sigma = s0;
  fit.ell = l0;
  if (data.n_pixels() == 0 || data.n_times() == 0) {
    fit.degenerate = true;
    fit.ell_identifiable = false;
    fit.note = "no valid residuals";
    return fit;
  }
  fit.ell_identifiable = data.n_pixels() >= 2;

  Eigen::Vector2d lo(std::log(b.sigma_min), std::log(b.ell_min));
  Eigen::Vector2d hi(std::log(b.sigma_max), std::log(b.ell_max));
  const Eigen::Vector2d x0(std::log(s0), std::log(l0));
  if (!fit.ell_identifiable) {
    lo(1) = hi(1) = x0(1);
    fit.note = "single pixel: ell not identifiable";
  }

  auto objective = [&](const Eigen::VectorXd& x) -> ValueGrad {
    try {
      const NllGrad v = neg_log_lik_region_grad(data, x(0), x(1), cfg.nugget);
      return {v.value, v.grad};
    } catch (const NumericError&) {
      return {std::numeric_limits<double>::infinity(), Eigen::Vector2d::Zero()};
    }
  };

  try {
    const BoxMinimizeResult r = minimize_box_bfgs(objective, x0, lo, hi, cfg.max_iter, cfg.grad_tol);
    fit.sigma = std::clamp(std::exp(r.x(0)), b.sigma_min, b.sigma_max);
    fit.ell = std::clamp(std::exp(r.x(1)), b.ell_min, b.ell_max);
    fit.nll = r.value;
    fit.iterations = r.iterations;
    fit.converged = r.converged;
    fit.grad_norm = r.projected_grad_norm;
    if (!r.converged && fit.note.empty()) fit.note = "optimizer stopped before reaching grad_tol";
  } catch (const NumericError& e) {
    fit.degenerate = true;
    fit.note = e.what();
  }
  return fit;
}

std::vector<RegionFit> fit_all_regions(const Partition& p, const RasterStack& residuals,
                                       std::span<const std::size_t> layers, const MLEConfig& cfg, unsigned threads) {
  const std::size_t n = static_cast<std::size_t>(p.region_count()) + 1;
  std::vector<RegionFit> fits(n);
  parallel_for(n, threads, [&](std::size_t r) {
    const auto id = static_cast<RegionId>(r);
    fits[r] = fit_region_mle(region_data(p, id, residuals, layers), cfg);
    fits[r].region = id;
  });
  return fits;
}

InflationVariant inflation_variant_from_name(const std::string& name) {
  if (name == "spectral") return InflationVariant::Spectral;
  if (name == "double-blur") return InflationVariant::DoubleBlur;
  throw ArgumentError("unknown variance-estimator variant \"" + name + "\" (expected spectral or double-blur)");
}

std::string to_string(InflationVariant v) { return v == InflationVariant::Spectral ? "spectral" : "double-blur"; }

BlurredSigmaEstimate estimate_blurred_sigma(std::span<const double> y_region, double ell, double b,
                                            double sigma_sensor, InflationVariant variant, double sigma_floor) {
  if (y_region.size() < 2) throw ArgumentError("variance estimate needs at least 2 pixels");
  if (!(ell > 0.0) || !(b >= 0.0) || !(sigma_sensor >= 0.0)) throw ArgumentError("invalid variance-estimator inputs");
  const auto n = static_cast<double>(y_region.size());
  double mean = 0.0;
  for (double v : y_region) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : y_region) ss += (v - mean) * (v - mean);

  BlurredSigmaEstimate est;
  est.sample_variance = ss / (n - 1.0);
  const double l2 = ell * ell;
  const double blur_var = variant == InflationVariant::Spectral ? b * b : 2.0 * b * b;
  const double bracket = est.sample_variance - sigma_sensor * sigma_sensor;
  if (!(bracket > 0.0)) {
    est.sigma = sigma_floor;
    est.floored = true;
    return est;
  }
  est.sigma = std::sqrt(bracket * ((l2 + blur_var) / l2));
  return est;
}

double aggregate_sigma_estimates(std::span<const double> estimates) {
  if (estimates.empty()) throw ArgumentError("cannot aggregate an empty list of estimates");
  std::vector<double> v(estimates.begin(), estimates.end());
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

nlohmann::ordered_json fit_report_json(const std::vector<RegionFit>& fits) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& f : fits) {
    nlohmann::ordered_json row;
    row["region"] = f.region;
    row["sigma"] = f.sigma;
    row["ell_px"] = f.ell;
    row["neg_log_lik"] = f.nll;
    row["iterations"] = f.iterations;
    row["converged"] = f.converged;
    row["grad_norm"] = f.grad_norm;
    row["n_pixels"] = f.n_pixels;
    row["n_times"] = f.n_times;
    row["ell_identifiable"] = f.ell_identifiable;
    row["degenerate"] = f.degenerate;
    row["note"] = f.note;
    arr.push_back(std::move(row));
  }
  return arr;
}

}  // namespace bdgp
