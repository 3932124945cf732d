#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace bdgp {

/// Geometry of a square-pixel grid. `origin` is the planar coordinate (meters)
/// of the centre of pixel (0, 0); column index grows along x and row index
/// grows along y.
struct GridGeom {
  std::size_t n_rows = 1;
  std::size_t n_cols = 1;
  double pixel_size_m = 1.0;
  std::array<double, 2> origin{0.0, 0.0};

  std::size_t size() const noexcept { return n_rows * n_cols; }
  std::size_t index(std::size_t row, std::size_t col) const noexcept { return row * n_cols + col; }
  std::size_t row_of(std::size_t idx) const noexcept { return idx / n_cols; }
  std::size_t col_of(std::size_t idx) const noexcept { return idx % n_cols; }

  /// Throws ArgumentError unless n_rows, n_cols >= 1 and pixel_size_m > 0.
  void validate() const;

  friend bool operator==(const GridGeom&, const GridGeom&) = default;
};

/// Exact equality of all four fields.
inline bool compatible(const GridGeom& a, const GridGeom& b) { return a == b; }

/// Immutable grid of float64 values with a validity mask. Invalid pixels are
/// stored as NaN; valid pixels are always finite.
class Raster {
 public:
  /// Throws DimensionError on size mismatch and ValidityError when a valid
  /// pixel is non-finite. Values at invalid pixels are replaced by NaN.
  Raster(GridGeom geom, std::vector<double> values, std::vector<std::uint8_t> valid,
         std::optional<double> timestamp_days = std::nullopt);

  /// Every NaN becomes an invalid pixel; any other non-finite value is an error.
  static Raster from_values(GridGeom geom, std::vector<double> values,
                            std::optional<double> timestamp_days = std::nullopt);
  static Raster filled(GridGeom geom, double value,
                       std::optional<double> timestamp_days = std::nullopt);
  static Raster invalid(GridGeom geom, std::optional<double> timestamp_days = std::nullopt);

  const GridGeom& geom() const noexcept { return geom_; }
  std::optional<double> timestamp_days() const noexcept { return timestamp_days_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const std::uint8_t> valid() const noexcept { return valid_; }

  double operator[](std::size_t idx) const noexcept { return values_[idx]; }
  double at(std::size_t row, std::size_t col) const noexcept { return values_[geom_.index(row, col)]; }
  bool is_valid(std::size_t idx) const noexcept { return valid_[idx] != 0; }
  bool is_valid(std::size_t row, std::size_t col) const noexcept {
    return valid_[geom_.index(row, col)] != 0;
  }
  std::size_t valid_count() const noexcept;

  Raster with_timestamp(std::optional<double> t) const;

  /// Bitwise comparison of values (NaN payloads included), mask, geometry and
  /// timestamp.
  bool bit_equal(const Raster& other) const;

 private:
  GridGeom geom_;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
  std::optional<double> timestamp_days_;
};

/// Ordered layers on one geometry with strictly increasing timestamps.
class RasterStack {
 public:
  /// Throws ArgumentError when a layer lacks a timestamp, timestamps are not
  /// strictly increasing, or a layer's geometry differs from `geom`.
  RasterStack(GridGeom geom, std::vector<Raster> layers);

  const GridGeom& geom() const noexcept { return geom_; }
  const std::vector<Raster>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }
  const Raster& operator[](std::size_t i) const noexcept { return layers_[i]; }
  std::vector<double> timestamps() const;

 private:
  GridGeom geom_;
  std::vector<Raster> layers_;
};

enum class ResampleMethod { Nearest, Bilinear };

/// Sample `src` at the pixel centres of `target`. Output pixels that depend on
/// an invalid source pixel, or fall outside the source extent, are invalid.
/// Throws ArgumentError when the resolution ratio leaves [1/10, 10] and when
/// no target pixel centre lies within the source extent.
Raster resample_to_grid(const Raster& src, const GridGeom& target, ResampleMethod method);

/// Run-length encoding of a boolean grid in row-major order: alternating
/// (0-run, 1-run) lengths starting with a possibly empty 0-run.
std::vector<std::uint64_t> encode_rle(std::span<const std::uint8_t> bits);

/// Inverse of encode_rle. Throws FormatError when the runs overshoot or fall
/// short of `total`.
std::vector<std::uint8_t> decode_rle(std::span<const std::uint64_t> runs, std::size_t total);

}  // namespace bdgp
