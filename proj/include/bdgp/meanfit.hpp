#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "bdgp/grid.hpp"

namespace bdgp {

inline constexpr double kYearDays = 365.0;

/// Which Fourier pairs accompany the intercept. The annual pair uses the
/// angle 2*pi*t/365 and the diurnal pair 2*pi*t, with t in days.
struct HarmonicSpec {
  bool include_annual = true;
  bool include_diurnal = false;

  std::size_t n_coeffs() const noexcept {
    return 1 + 2 * (static_cast<std::size_t>(include_annual) + static_cast<std::size_t>(include_diurnal));
  }
  friend bool operator==(const HarmonicSpec&, const HarmonicSpec&) = default;
};

/// Annual-only (sun-synchronous sensor) and annual+diurnal presets.
inline constexpr HarmonicSpec kAnnualOnly{true, false};
inline constexpr HarmonicSpec kAnnualDiurnal{true, true};

/// Design-matrix row [1, cos, sin, (cos, sin)] at time t.
std::vector<double> harmonic_basis(const HarmonicSpec& spec, double t_days);

/// Per-pixel regression coefficients, pixel-major: coefficient k of pixel i
/// lives at coeffs[i * n_coeffs + k].
class HarmonicModel {
 public:
  HarmonicModel(GridGeom geom, HarmonicSpec spec, std::vector<double> coeffs, std::vector<std::uint8_t> fit_valid);

  const GridGeom& geom() const noexcept { return geom_; }
  const HarmonicSpec& spec() const noexcept { return spec_; }
  std::span<const double> coeffs(std::size_t idx) const noexcept {
    return std::span<const double>(coeffs_).subspan(idx * spec_.n_coeffs(), spec_.n_coeffs());
  }
  bool fit_valid(std::size_t idx) const noexcept { return fit_valid_[idx] != 0; }
  std::span<const std::uint8_t> fit_valid_mask() const noexcept { return fit_valid_; }

  /// Fitted mean at pixel `idx`; meaningless where fit_valid is false.
  double evaluate(std::size_t idx, double t_days) const;

 private:
  GridGeom geom_;
  HarmonicSpec spec_;
  std::vector<double> coeffs_;
  std::vector<std::uint8_t> fit_valid_;
};

/// Ordinary least squares per pixel over the layers where that pixel is
/// valid. Pixels with fewer observations than coefficients, or an
/// ill-conditioned normal matrix, are marked not fit-valid.
HarmonicModel fit_harmonic(const RasterStack& stack, const HarmonicSpec& spec, unsigned threads = 1);

Raster predict_mean(const HarmonicModel& m, double t_days);

/// Layerwise observation minus fitted mean. Throws ArgumentError on a
/// geometry mismatch.
RasterStack residuals(const RasterStack& stack, const HarmonicModel& m);

/// Samples the fitted curve of one pixel. Throws ArgumentError when the pixel
/// is outside the grid or not fit-valid.
std::vector<std::pair<double, double>> cycle_curve(const HarmonicModel& m, std::size_t row, std::size_t col,
                                                   std::span<const double> t_grid);

/// Layered raster with role "harmonic-coeffs": one layer per coefficient and
/// a trailing 0/1 validity layer.
void write_harmonic(const HarmonicModel& m, const std::filesystem::path& path);
HarmonicModel read_harmonic(const std::filesystem::path& path);

}  // namespace bdgp
