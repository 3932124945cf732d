#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bdgp/grid.hpp"

namespace bdgp {

enum class Palette { Gray, Viridis, Coolwarm, Labels };

/// Accepts "gray", "viridis", "coolwarm" and "labels".
Palette palette_from_name(std::string_view name);

struct Rgba {
  unsigned char r, g, b, a;
  friend bool operator==(const Rgba&, const Rgba&) = default;
};

/// Colour for a value already normalised to [0, 1] (clamped). The Labels
/// palette ignores the normalisation and hashes the rounded raw value instead.
Rgba palette_color(Palette p, double unit_value);

/// RGBA pixels (row-major, 4 bytes per pixel) of the heatmap; invalid pixels
/// are fully transparent. Without `range` the valid min/max are used and an
/// all-invalid raster is an ArgumentError.
std::vector<unsigned char> heatmap_pixels(const Raster& r, Palette palette,
                                          std::optional<std::pair<double, double>> range);

void render_heatmap(const Raster& r, const std::filesystem::path& path, Palette palette,
                    std::optional<std::pair<double, double>> range = std::nullopt);

/// Decodes an 8-bit RGBA PNG written by render_heatmap (used by tests).
std::vector<unsigned char> read_png_rgba(const std::filesystem::path& path, std::size_t& width,
                                         std::size_t& height);

struct LineSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

/// Minimal SVG line chart.
void write_line_plot_svg(const std::vector<LineSeries>& series, const std::filesystem::path& path,
                         const std::string& title, const std::string& x_label,
                         const std::string& y_label);

}  // namespace bdgp
