#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "bdgp/error.hpp"
#include "bdgp/estimate.hpp"
#include "bdgp/kernel.hpp"
#include "bdgp/krige.hpp"

namespace bdgp {

namespace fs = std::filesystem;

/// Batch configuration, read from one JSON document. Every physical quantity
/// carries its unit in the key name (_m, _px, _days, _field, _field_sq);
/// unknown keys are rejected. Relative paths resolve against the directory of
/// the config file. Unset input paths default to the outputs of the earlier
/// subcommands inside `out_dir`.
struct PipelineConfig {
  fs::path base_dir = ".";
  fs::path out_dir = "out";
  std::uint64_t seed = 0;
  unsigned threads = 1;

  struct Blur {
    double fwhm_m = 160.0;
    double native_px_m = 70.0;
    double target_px_m = 70.0;
    /// Overrides the FWHM conversion when set.
    std::optional<double> sigma_blur_px;
    double sigma_sensor_field = 0.1;
  } blur;

  MLEConfig mle;
  InflationVariant variance_estimator = InflationVariant::Spectral;

  struct Refine {
    std::optional<fs::path> masks_path;
    std::size_t min_area_px = 100;
  } refine;

  struct FitMean {
    std::optional<fs::path> hires_stack_path;
    std::optional<fs::path> lowres_stack_path;
    std::optional<std::array<std::size_t, 2>> cycle_pixel_rowcol;
    double cycle_step_days = 1.0;
  } fit_mean;

  struct FitParams {
    std::optional<fs::path> partition_path;
    std::optional<fs::path> hires_residuals_path;
    std::optional<fs::path> lowres_residuals_path;
    std::optional<std::vector<std::size_t>> hires_layers;
  } fit_params;

  struct Krige {
    std::optional<fs::path> partition_path;
    std::optional<fs::path> params_path;
    std::optional<fs::path> target_stack_path;
    std::size_t target_layer = 0;
    double neighborhood_radius_factor = 4.0;
    std::size_t max_region_pixels = 20000;
    bool include_background = false;
    double nugget_field_sq = 1e-8;
  } krige;

  struct Verify {
    std::size_t grid_rows_px = 64;
    std::size_t grid_cols_px = 64;
    double pixel_size_m = 70.0;
    std::size_t field_rows = 2;
    std::size_t field_cols = 4;
    std::size_t road_width_px = 2;
    std::size_t n_replicates = 20;
    /// The synthetic experiment keeps its own, nearly noise-free sensor.
    double sigma_sensor_field = 1e-4;
    std::pair<double, double> sigma_range_field{0.5, 3.0};
    std::pair<double, double> ell_range_px{1.5, 6.0};
    bool estimate_params = false;
    std::size_t mle_scenes = 4;
    std::size_t max_region_pixels = 6000;
    bool write_figures = true;
  } verify;

  struct Render {
    std::optional<fs::path> input_path;
    std::size_t layer = 0;
    std::string palette = "viridis";
    std::optional<std::pair<double, double>> range_field;
    std::optional<fs::path> output_path;
  } render;

  /// Throws ConfigError with the offending key path on any schema violation.
  static PipelineConfig parse(const std::string& json_text, const fs::path& base_dir = ".");
  static PipelineConfig load(const fs::path& file);

  double sigma_blur_px() const;
  BlurSpec blur_spec() const;
  KrigeConfig krige_config() const;
  fs::path resolve(const fs::path& p) const;
  fs::path output(const std::string& name) const;
};

/// Fitted parameters per region id: sigma from the high-resolution residuals,
/// the shared length scale, and sigma for the blurred sensor.
struct ParamsFile {
  double sigma_blur_px = 0.0;
  double sigma_sensor_field = 0.0;
  std::string variance_estimator = "spectral";
  std::vector<double> sigma_hires;
  std::vector<double> ell_px;
  std::vector<double> sigma_lowres;

  /// (sigma_lowres, ell) as used for kriging the blurred sensor.
  RegionParams kriging_params() const;
};

void write_params(const ParamsFile& p, const fs::path& path);
ParamsFile read_params(const fs::path& path);

enum class Sensor { Hires, Lowres };
Sensor sensor_from_name(const std::string& name);

/// Each subcommand returns a short JSON summary of what it wrote; warnings
/// are collected under "warnings".
nlohmann::ordered_json cmd_refine(const PipelineConfig& cfg);
nlohmann::ordered_json cmd_fit_mean(const PipelineConfig& cfg, Sensor sensor);
nlohmann::ordered_json cmd_fit_params(const PipelineConfig& cfg);
nlohmann::ordered_json cmd_krige(const PipelineConfig& cfg);
nlohmann::ordered_json cmd_verify(const PipelineConfig& cfg);
nlohmann::ordered_json cmd_render(const PipelineConfig& cfg);

/// Process exit status for an error category.
int exit_code(ErrorCategory c) noexcept;

}  // namespace bdgp
