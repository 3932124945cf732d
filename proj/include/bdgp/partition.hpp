#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bdgp/grid.hpp"

namespace bdgp {

using RegionId = std::uint32_t;
inline constexpr RegionId kBackground = 0;

/// Possibly overlapping boolean masks from an external segmenter.
struct MaskSet {
  GridGeom geom;
  std::vector<std::vector<std::uint8_t>> masks;
};

/// JSON mask-set file ("BDGP-MASKS", version 1) with row-major run-length
/// encoded masks. Optional "pixel_size_m"/"origin" fields fill the geometry;
/// otherwise a 1 m grid at the origin is assumed.
MaskSet parse_masks(const std::string& text);
std::string format_masks(const MaskSet& m);
MaskSet read_masks(const std::filesystem::path& path);
void write_masks(const MaskSet& m, const std::filesystem::path& path);

/// Disjoint labelling of every pixel: 0 is the background region, 1..N are
/// non-empty regions.
class Partition {
 public:
  /// Throws DimensionError when sizes disagree and ArgumentError when a label
  /// in 1..max is unused.
  Partition(GridGeom geom, std::vector<RegionId> labels);

  const GridGeom& geom() const noexcept { return geom_; }
  std::span<const RegionId> labels() const noexcept { return labels_; }
  RegionId label(std::size_t idx) const noexcept { return labels_[idx]; }
  /// Number of non-background regions N.
  RegionId region_count() const noexcept { return n_regions_; }
  /// Pixel indices of region `id` in row-major order; id 0 gives the background.
  std::span<const std::size_t> region_pixels(RegionId id) const;

  /// Same labelling on a different geometry with identical dimensions.
  Partition rebind(const GridGeom& geom) const;

  Raster to_raster() const;
  static Partition from_raster(const Raster& r);

 private:
  GridGeom geom_;
  std::vector<RegionId> labels_;
  RegionId n_regions_ = 0;
  std::vector<std::vector<std::size_t>> pixels_;
};

void write_partition(const Partition& p, const std::filesystem::path& path);
Partition read_partition(const std::filesystem::path& path);

/// Turns overlapping masks into a partition: masks smaller than `min_area`
/// are dropped, the rest are visited from largest to smallest (ties keep input
/// order) and each visited mask takes its pixels away from every mask kept
/// before it. Masks left empty are dropped; uncovered pixels are background.
/// Region ids follow the visiting order.
Partition refine_masks(const MaskSet& m, std::size_t min_area = 100);

struct Neighborhood {
  RegionId region_id = 0;
  std::vector<std::size_t> core_pixels;
  std::vector<std::size_t> dilated_pixels;
};

/// Grid pixels within Euclidean centre distance `radius_px` of the region
/// (disk structuring element). Both lists are sorted row-major.
Neighborhood dilate_region(const Partition& p, RegionId region_id, double radius_px);

struct RegionStats {
  RegionId id = 0;
  std::size_t area = 0;
  std::size_t row_min = 0, row_max = 0, col_min = 0, col_max = 0;
};

/// Background first, then regions 1..N. An empty background reports zero
/// area and a zero bounding box.
std::vector<RegionStats> partition_stats(const Partition& p);

}  // namespace bdgp
