#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdgp/grid.hpp"

namespace bdgp {

inline constexpr const char* kRasterMagic = "BDGP-RASTER";
inline constexpr int kRasterVersion = 1;

/// Single-layer raster file: one JSON header line followed by
/// n_rows * n_cols little-endian float64 values in row-major order.
void write_raster(const Raster& r, const std::filesystem::path& path);
Raster read_raster(const std::filesystem::path& path);

/// Multi-layer extension of the raster format. The header gains "n_layers",
/// "role" and a per-layer "layers" array; payload is the layers back to back.
/// `attrs` carries role-specific header fields.
struct LayeredRaster {
  GridGeom geom;
  std::string role;
  std::vector<Raster> layers;
  nlohmann::ordered_json attrs = nlohmann::ordered_json::object();
};

void write_layered(const LayeredRaster& lr, const std::filesystem::path& path);
LayeredRaster read_layered(const std::filesystem::path& path);

/// Stacks are layered files with role "stack".
void write_stack(const RasterStack& stack, const std::filesystem::path& path);
RasterStack read_stack(const std::filesystem::path& path);

/// In-memory encode/decode used by the file functions; exposed for tests and
/// the Python bindings.
std::string encode_raster(const Raster& r);
Raster decode_raster(const std::string& bytes);

}  // namespace bdgp
