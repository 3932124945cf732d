#include "bdgp/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "bdgp/error.hpp"

namespace bdgp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t bits_of(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace

void GridGeom::validate() const {
  if (n_rows < 1 || n_cols < 1) throw ArgumentError("grid must have at least one row and column");
  if (!(pixel_size_m > 0.0) || !std::isfinite(pixel_size_m))
    throw ArgumentError("pixel_size_m must be positive and finite");
  if (!std::isfinite(origin[0]) || !std::isfinite(origin[1]))
    throw ArgumentError("grid origin must be finite");
}

Raster::Raster(GridGeom geom, std::vector<double> values, std::vector<std::uint8_t> valid,
               std::optional<double> timestamp_days)
    : geom_(geom), values_(std::move(values)), valid_(std::move(valid)), timestamp_days_(timestamp_days) {
  geom_.validate();
  if (values_.size() != geom_.size() || valid_.size() != geom_.size()) {
    std::ostringstream msg;
    msg << "raster arrays hold " << values_.size() << " values and " << valid_.size()
        << " mask entries, geometry needs " << geom_.size();
    throw DimensionError(msg.str());
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (valid_[i] != 0) {
      valid_[i] = 1;
      if (!std::isfinite(values_[i])) {
        throw ValidityError("non-finite value at valid pixel " + std::to_string(i), i);
      }
    } else {
      values_[i] = kNaN;
    }
  }
}

Raster Raster::from_values(GridGeom geom, std::vector<double> values, std::optional<double> timestamp_days) {
  std::vector<std::uint8_t> valid(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) valid[i] = std::isnan(values[i]) ? 0 : 1;
  return Raster(geom, std::move(values), std::move(valid), timestamp_days);
}

Raster Raster::filled(GridGeom geom, double value, std::optional<double> timestamp_days) {
  return Raster(geom, std::vector<double>(geom.size(), value), std::vector<std::uint8_t>(geom.size(), 1),
                timestamp_days);
}

Raster Raster::invalid(GridGeom geom, std::optional<double> timestamp_days) {
  return Raster(geom, std::vector<double>(geom.size(), kNaN), std::vector<std::uint8_t>(geom.size(), 0),
                timestamp_days);
}

std::size_t Raster::valid_count() const noexcept {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

Raster Raster::with_timestamp(std::optional<double> t) const {
  Raster out = *this;
  out.timestamp_days_ = t;
  return out;
}

bool Raster::bit_equal(const Raster& other) const {
  if (!(geom_ == other.geom_) || valid_ != other.valid_) return false;
  if (timestamp_days_.has_value() != other.timestamp_days_.has_value()) return false;
  if (timestamp_days_ && bits_of(*timestamp_days_) != bits_of(*other.timestamp_days_)) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (bits_of(values_[i]) != bits_of(other.values_[i])) return false;
  }
  return true;
}

RasterStack::RasterStack(GridGeom geom, std::vector<Raster> layers) : geom_(geom), layers_(std::move(layers)) {
  geom_.validate();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!compatible(layers_[i].geom(), geom_))
      throw ArgumentError("stack layer " + std::to_string(i) + " has a different geometry");
    if (!layers_[i].timestamp_days())
      throw ArgumentError("stack layer " + std::to_string(i) + " has no timestamp");
    if (i > 0 && !(*layers_[i].timestamp_days() > *layers_[i - 1].timestamp_days()))
      throw ArgumentError("stack timestamps must be strictly increasing (layer " + std::to_string(i) + ")");
  }
}

std::vector<double> RasterStack::timestamps() const {
  std::vector<double> ts;
  ts.reserve(layers_.size());
  for (const auto& l : layers_) ts.push_back(*l.timestamp_days());
  return ts;
}

Raster resample_to_grid(const Raster& src, const GridGeom& target, ResampleMethod method) {
  target.validate();
  const GridGeom& sg = src.geom();
  const double ratio = target.pixel_size_m / sg.pixel_size_m;
  if (ratio < 0.1 || ratio > 10.0)
    throw ArgumentError("target resolution must be within 1/10 to 10 times the source resolution");

  const auto n_r = static_cast<double>(sg.n_rows);
  const auto n_c = static_cast<double>(sg.n_cols);
  std::vector<double> out(target.size(), kNaN);
  std::vector<std::uint8_t> ok(target.size(), 0);
  bool any_overlap = false;

  for (std::size_t i = 0; i < target.n_rows; ++i) {
    const double y = target.origin[1] + static_cast<double>(i) * target.pixel_size_m;
    const double fr = (y - sg.origin[1]) / sg.pixel_size_m;
    for (std::size_t j = 0; j < target.n_cols; ++j) {
      const double x = target.origin[0] + static_cast<double>(j) * target.pixel_size_m;
      const double fc = (x - sg.origin[0]) / sg.pixel_size_m;
      if (fr < -0.5 || fr > n_r - 0.5 || fc < -0.5 || fc > n_c - 0.5) continue;
      any_overlap = true;
      const std::size_t t = target.index(i, j);

      if (method == ResampleMethod::Nearest) {
        const auto r = static_cast<std::size_t>(std::clamp(std::floor(fr + 0.5), 0.0, n_r - 1));
        const auto c = static_cast<std::size_t>(std::clamp(std::floor(fc + 0.5), 0.0, n_c - 1));
        if (src.is_valid(r, c)) {
          out[t] = src.at(r, c);
          ok[t] = 1;
        }
        continue;
      }

      const double cr = std::clamp(fr, 0.0, n_r - 1);
      const double cc = std::clamp(fc, 0.0, n_c - 1);
      const auto r0 = static_cast<std::size_t>(std::min(std::floor(cr), std::max(n_r - 2, 0.0)));
      const auto c0 = static_cast<std::size_t>(std::min(std::floor(cc), std::max(n_c - 2, 0.0)));
      const double wr = cr - static_cast<double>(r0);
      const double wc = cc - static_cast<double>(c0);
      double acc = 0.0;
      bool good = true;
      for (std::size_t dr = 0; dr < 2 && good; ++dr) {
        const double w_row = dr == 0 ? 1.0 - wr : wr;
        if (w_row == 0.0) continue;
        for (std::size_t dc = 0; dc < 2; ++dc) {
          const double w = w_row * (dc == 0 ? 1.0 - wc : wc);
          if (w == 0.0) continue;
          if (!src.is_valid(r0 + dr, c0 + dc)) {
            good = false;
            break;
          }
          acc += w * src.at(r0 + dr, c0 + dc);
        }
      }
      if (good) {
        out[t] = acc;
        ok[t] = 1;
      }
    }
  }
  if (!any_overlap) throw ArgumentError("source and target grids do not overlap");
  return Raster(target, std::move(out), std::move(ok), src.timestamp_days());
}

std::vector<std::uint64_t> encode_rle(std::span<const std::uint8_t> bits) {
  std::vector<std::uint64_t> runs;
  std::uint8_t current = 0;
  std::uint64_t len = 0;
  for (std::uint8_t b : bits) {
    const std::uint8_t v = b != 0 ? 1 : 0;
    if (v == current) {
      ++len;
    } else {
      runs.push_back(len);
      current = v;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

std::vector<std::uint8_t> decode_rle(std::span<const std::uint64_t> runs, std::size_t total) {
  std::vector<std::uint8_t> bits;
  bits.reserve(total);
  std::uint8_t value = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    if (runs[k] > total - bits.size()) {
      throw FormatError("run " + std::to_string(k) + " extends past the end of the grid (" +
                        std::to_string(total) + " pixels)");
    }
    bits.insert(bits.end(), runs[k], value);
    value ^= 1;
  }
  if (bits.size() != total) {
    throw FormatError("runs cover " + std::to_string(bits.size()) + " pixels, grid has " +
                      std::to_string(total));
  }
  return bits;
}

}  // namespace bdgp
