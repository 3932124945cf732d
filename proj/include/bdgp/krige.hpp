#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdgp/grid.hpp"
#include "bdgp/kernel.hpp"
#include "bdgp/partition.hpp"

namespace bdgp {

struct KrigeConfig {
  /// Neighbourhood radius in units of the blur std.
  double neighborhood_radius_factor = 4.0;
  /// Regions with more core pixels than this are skipped.
  std::size_t max_region_pixels = 20000;
  BlurSpec blur;
  bool include_background = false;
  /// Added to the observation covariance diagonal on top of sigma_sensor^2.
  double nugget = 1e-8;

  void validate() const;
};

struct RegionPrediction {
  RegionId region = 0;
  std::vector<double> mean;
  std::vector<double> variance;
  std::size_t n_observations = 0;
  bool skipped = false;
  std::string reason;
};

/// Posterior mean and variance of the latent residual at `targets` given the
/// blurred, noisy observations `obs` inside the neighbourhood. Only
/// observations labelled with the neighbourhood's region enter the solve:
/// covariances across regions are zero, so other labels drop out exactly.
/// Throws ArgumentError if a target lies outside the region core and
/// NumericError on factorisation failure or a clearly negative variance.
RegionPrediction krige_region(const Partition& p, const Neighborhood& nb, const Raster& obs,
                              const RegionParams& theta, const KrigeConfig& cfg,
                              std::span<const std::size_t> targets);

struct SkippedRegion {
  RegionId region = 0;
  std::string reason;
};

struct KrigeResult {
  Raster mean;
  Raster variance;
  std::vector<SkippedRegion> skipped;
};

/// One neighbourhood per reconstructed region, dilated by
/// neighborhood_radius_factor * sigma_blur_px. The background, when included,
/// uses its own pixels as both core and neighbourhood.
std::vector<Neighborhood> region_neighborhoods(const Partition& p, const KrigeConfig& cfg);

/// Kriges every region core and assembles the rasters. Pixels outside the
/// reconstructed regions, and pixels of skipped regions, are invalid.
/// Output is identical for any `threads` value.
KrigeResult krige_all(const Partition& p, std::span<const Neighborhood> neighborhoods, const Raster& obs,
                      const RegionParams& theta, const KrigeConfig& cfg, unsigned threads = 1);

/// Convenience overload computing the neighbourhoods itself.
KrigeResult krige_all(const Partition& p, const Raster& obs, const RegionParams& theta, const KrigeConfig& cfg,
                      unsigned threads = 1);

/// 2 * sqrt(variance) per pixel, invalid where the variance is.
Raster two_sigma_map(const KrigeResult& kr);

nlohmann::ordered_json skip_report_json(const KrigeResult& kr);

}  // namespace bdgp
