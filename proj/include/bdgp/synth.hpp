#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "json.hpp"

#include "bdgp/estimate.hpp"
#include "bdgp/grid.hpp"
#include "bdgp/kernel.hpp"
#include "bdgp/krige.hpp"
#include "bdgp/partition.hpp"

namespace bdgp {

struct SynthSpec {
  GridGeom geom;
  Partition partition;
  RegionParams theta_true;
  BlurSpec blur;
  std::uint64_t seed = 0;
  std::size_t n_replicates = 1;
  /// Largest region sampled by dense Cholesky.
  std::size_t max_region_pixels = 6000;
  /// Jitter added to the unit-variance correlation before factorising.
  double jitter = 1e-8;

  void validate() const;
};

struct SynthBundle {
  RasterStack truth;
  RasterStack blurred_obs;
};

/// Independent draws of the block-diagonal field, one layer per replicate
/// (timestamp = replicate index). Every (region, replicate) pair has its own
/// random stream derived from the seed, so results do not depend on `threads`.
RasterStack sample_bdgp(const SynthSpec& spec, unsigned threads = 1);

enum class BlurBoundary { Renormalize, Periodic };

/// Discrete convolution with a sampled Gaussian of std b truncated at
/// +-floor(4b) pixels per axis. Renormalize rescales the weights over the
/// in-grid support; Periodic wraps around the grid. Output pixels whose
/// window touches an invalid input are invalid. b = 0 returns the input.
Raster apply_blur(const Raster& field, double b, BlurBoundary boundary = BlurBoundary::Renormalize);

/// Adds i.i.d. N(0, sigma_sensor^2) noise at valid pixels.
Raster add_sensor_noise(const Raster& field, double sigma_sensor, std::uint64_t seed);

/// Truth plus blurred, noisy observations for every replicate.
SynthBundle synthesize(const SynthSpec& spec, unsigned threads = 1);

/// Rectangular fields separated by background roads of `road_width_px`.
Partition field_layout(const GridGeom& geom, std::size_t field_rows, std::size_t field_cols,
                       std::size_t road_width_px);

/// Parameters drawn uniformly from the given ranges for ids 0..n_regions.
RegionParams random_region_params(RegionId n_regions, std::uint64_t seed, std::pair<double, double> sigma_range,
                                  std::pair<double, double> ell_range);

struct VerificationOptions {
  /// Re-estimate parameters (ell by MLE on the truth, sigma from the blurred
  /// observations) instead of kriging with the true parameters.
  bool estimate_params = false;
  MLEConfig mle;
  InflationVariant variant = InflationVariant::Spectral;
  /// Number of truth replicates used for the ell fit when estimating.
  std::size_t mle_scenes = 4;
  unsigned threads = 1;
};

struct ReplicateScore {
  std::size_t replicate = 0;
  std::size_t n_pixels = 0;
  double rmse_blurred = 0.0;
  double rmse_kriged = 0.0;
  double coverage_2sigma = 0.0;
};

struct VariantStudy {
  InflationVariant variant;
  double median_ratio = 0.0;  // median over regions of sigma_hat / sigma_true
  bool within_15pct = false;
};

struct VerificationReport {
  std::vector<ReplicateScore> replicates;
  double median_rmse_blurred = 0.0;
  double median_rmse_kriged = 0.0;
  double median_rmse_reduction = 0.0;
  double pooled_coverage_2sigma = 0.0;
  bool all_replicates_improved = false;
  RegionParams params_used;
  bool params_mode_estimated = false;
  double sigma_blur_px = 0.0;
  double sigma_sensor = 0.0;
  std::vector<VariantStudy> variance_study;
  std::vector<SkippedRegion> skipped;
  /// Figure rasters for replicate 0.
  std::optional<Raster> truth0, blurred0, kriged0, two_sigma0;

  nlohmann::ordered_json to_json() const;
};

/// Sample, blur, add noise, krige and score every replicate.
VerificationReport run_verification(const SynthSpec& spec, const KrigeConfig& cfg, const VerificationOptions& opts);

}  // namespace bdgp
