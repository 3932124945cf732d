#include "bdgp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "bdgp/meanfit.hpp"
#include "bdgp/partition.hpp"
#include "bdgp/raster_io.hpp"
#include "bdgp/render.hpp"
#include "bdgp/synth.hpp"

namespace bdgp {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

constexpr const char* kParamsMagic = "BDGP-PARAMS";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("error while writing " + path.string());
}

void write_json(const fs::path& path, const ojson& doc) { write_text(path, doc.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void warn(ojson& summary, const std::string& msg) {
  std::cerr << "warning: " << msg << "\n";
  summary["warnings"].push_back(msg);
}

// Schema helpers. `where` is the dotted key path used in messages.
void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (ok.count(key)) continue;
    std::string msg = "unknown key '" + where + "." + key + "'";
    for (const auto& a : ok) {
      if (a.rfind(key + "_", 0) == 0) {
        msg += "; did you mean '" + a + "'? Physical quantities need a unit suffix";
        break;
      }
    }
    throw ConfigError(msg);
  }
}

double get_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(where + " must be finite");
  return x;
}

double get_positive(const json& v, const std::string& where) {
  const double x = get_number(v, where);
  if (!(x > 0.0)) throw ConfigError(where + " must be positive");
  return x;
}

std::uint64_t get_count(const json& v, const std::string& where) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError(where + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

bool get_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw ConfigError(where + " must be true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + " must be a string");
  return v.get<std::string>();
}

std::pair<double, double> get_range(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2) throw ConfigError(where + " must be a [low, high] pair");
  const double lo = get_number(v[0], where + "[0]");
  const double hi = get_number(v[1], where + "[1]");
  if (!(lo <= hi)) throw ConfigError(where + " must satisfy low <= high");
  return {lo, hi};
}

template <class F>
void with(const json& obj, const char* key, F&& f) {
  if (auto it = obj.find(key); it != obj.end()) f(*it);
}

Raster paint_regions(const Partition& p, const std::vector<double>& per_region, bool include_background) {
  const std::size_t n = p.geom().size();
  std::vector<double> v(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    const RegionId r = p.label(i);
    if (r == kBackground && !include_background) continue;
    v[i] = per_region.at(r);
  }
  return Raster::from_values(p.geom(), std::move(v));
}

std::vector<std::size_t> all_layers(const RasterStack& s) {
  std::vector<std::size_t> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = i;
  return out;
}

// Symmetric colour range around zero covering every given raster.
std::pair<double, double> symmetric_range(std::initializer_list<const Raster*> rasters) {
  double m = 0.0;
  for (const Raster* r : rasters) {
    for (std::size_t i = 0; i < r->geom().size(); ++i) {
      if (r->is_valid(i)) m = std::max(m, std::abs((*r)[i]));
    }
  }
  if (m == 0.0) m = 1.0;
  return {-m, m};
}

}  // namespace

PipelineConfig PipelineConfig::parse(const std::string& json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  c.base_dir = base_dir;
  check_keys(doc, "config",
             {"seed", "threads", "out_dir", "blur", "mle", "variance_estimator", "refine", "fit_mean", "fit_params",
              "krige", "verify", "render"});
  auto path_of = [](const json& v, const std::string& where) { return fs::path(get_string(v, where)); };

  with(doc, "seed", [&](const json& v) { c.seed = get_count(v, "seed"); });
  with(doc, "threads", [&](const json& v) { c.threads = static_cast<unsigned>(get_count(v, "threads")); });
  with(doc, "out_dir", [&](const json& v) { c.out_dir = path_of(v, "out_dir"); });
  with(doc, "variance_estimator", [&](const json& v) {
    try {
      c.variance_estimator = inflation_variant_from_name(get_string(v, "variance_estimator"));
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("variance_estimator: ") + e.what());
    }
  });

  with(doc, "blur", [&](const json& s) {
    check_keys(s, "blur", {"fwhm_m", "native_px_m", "target_px_m", "sigma_blur_px", "sigma_sensor_field"});
    with(s, "fwhm_m", [&](const json& v) { c.blur.fwhm_m = get_positive(v, "blur.fwhm_m"); });
    with(s, "native_px_m", [&](const json& v) { c.blur.native_px_m = get_positive(v, "blur.native_px_m"); });
    with(s, "target_px_m", [&](const json& v) { c.blur.target_px_m = get_positive(v, "blur.target_px_m"); });
    with(s, "sigma_blur_px", [&](const json& v) {
      c.blur.sigma_blur_px = get_number(v, "blur.sigma_blur_px");
      if (*c.blur.sigma_blur_px < 0.0) throw ConfigError("blur.sigma_blur_px must be non-negative");
    });
    with(s, "sigma_sensor_field", [&](const json& v) {
      c.blur.sigma_sensor_field = get_number(v, "blur.sigma_sensor_field");
      if (c.blur.sigma_sensor_field < 0.0) throw ConfigError("blur.sigma_sensor_field must be non-negative");
    });
  });

  with(doc, "mle", [&](const json& s) {
    check_keys(s, "mle",
               {"nugget_field_sq", "max_iter", "grad_tol", "init_sigma_field", "init_ell_px", "ell_min_px",
                "ell_max_px", "sigma_min_field", "sigma_max_field"});
    with(s, "nugget_field_sq", [&](const json& v) { c.mle.nugget = get_number(v, "mle.nugget_field_sq"); });
    with(s, "max_iter", [&](const json& v) { c.mle.max_iter = static_cast<int>(get_count(v, "mle.max_iter")); });
    with(s, "grad_tol", [&](const json& v) { c.mle.grad_tol = get_positive(v, "mle.grad_tol"); });
    with(s, "init_sigma_field", [&](const json& v) { c.mle.init_sigma = get_positive(v, "mle.init_sigma_field"); });
    with(s, "init_ell_px", [&](const json& v) { c.mle.init_ell = get_positive(v, "mle.init_ell_px"); });
    with(s, "ell_min_px", [&](const json& v) { c.mle.bounds.ell_min = get_positive(v, "mle.ell_min_px"); });
    with(s, "ell_max_px", [&](const json& v) { c.mle.bounds.ell_max = get_positive(v, "mle.ell_max_px"); });
    with(s, "sigma_min_field", [&](const json& v) { c.mle.bounds.sigma_min = get_positive(v, "mle.sigma_min_field"); });
    with(s, "sigma_max_field", [&](const json& v) { c.mle.bounds.sigma_max = get_positive(v, "mle.sigma_max_field"); });
    try {
      c.mle.validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("mle: ") + e.what());
    }
  });

  with(doc, "refine", [&](const json& s) {
    check_keys(s, "refine", {"masks_path", "min_area_px"});
    with(s, "masks_path", [&](const json& v) { c.refine.masks_path = path_of(v, "refine.masks_path"); });
    with(s, "min_area_px", [&](const json& v) { c.refine.min_area_px = get_count(v, "refine.min_area_px"); });
  });

  with(doc, "fit_mean", [&](const json& s) {
    check_keys(s, "fit_mean", {"hires_stack_path", "lowres_stack_path", "cycle_pixel_rowcol", "cycle_step_days"});
    with(s, "hires_stack_path", [&](const json& v) { c.fit_mean.hires_stack_path = path_of(v, "fit_mean.hires_stack_path"); });
    with(s, "lowres_stack_path",
         [&](const json& v) { c.fit_mean.lowres_stack_path = path_of(v, "fit_mean.lowres_stack_path"); });
    with(s, "cycle_pixel_rowcol", [&](const json& v) {
      if (!v.is_array() || v.size() != 2) throw ConfigError("fit_mean.cycle_pixel_rowcol must be [row, col]");
      c.fit_mean.cycle_pixel_rowcol = std::array<std::size_t, 2>{get_count(v[0], "fit_mean.cycle_pixel_rowcol[0]"),
                                                                 get_count(v[1], "fit_mean.cycle_pixel_rowcol[1]")};
    });
    with(s, "cycle_step_days", [&](const json& v) { c.fit_mean.cycle_step_days = get_positive(v, "fit_mean.cycle_step_days"); });
  });

  with(doc, "fit_params", [&](const json& s) {
    check_keys(s, "fit_params", {"partition_path", "hires_residuals_path", "lowres_residuals_path", "hires_layers"});
    with(s, "partition_path", [&](const json& v) { c.fit_params.partition_path = path_of(v, "fit_params.partition_path"); });
    with(s, "hires_residuals_path",
         [&](const json& v) { c.fit_params.hires_residuals_path = path_of(v, "fit_params.hires_residuals_path"); });
    with(s, "lowres_residuals_path",
         [&](const json& v) { c.fit_params.lowres_residuals_path = path_of(v, "fit_params.lowres_residuals_path"); });
    with(s, "hires_layers", [&](const json& v) {
      if (!v.is_array()) throw ConfigError("fit_params.hires_layers must be an array of layer indices");
      std::vector<std::size_t> layers;
      for (const auto& x : v) layers.push_back(get_count(x, "fit_params.hires_layers[]"));
      c.fit_params.hires_layers = std::move(layers);
    });
  });

  with(doc, "krige", [&](const json& s) {
    check_keys(s, "krige",
               {"partition_path", "params_path", "target_stack_path", "target_layer", "neighborhood_radius_factor",
                "max_region_pixels", "include_background", "nugget_field_sq"});
    with(s, "partition_path", [&](const json& v) { c.krige.partition_path = path_of(v, "krige.partition_path"); });
    with(s, "params_path", [&](const json& v) { c.krige.params_path = path_of(v, "krige.params_path"); });
    with(s, "target_stack_path", [&](const json& v) { c.krige.target_stack_path = path_of(v, "krige.target_stack_path"); });
    with(s, "target_layer", [&](const json& v) { c.krige.target_layer = get_count(v, "krige.target_layer"); });
    with(s, "neighborhood_radius_factor", [&](const json& v) {
      c.krige.neighborhood_radius_factor = get_positive(v, "krige.neighborhood_radius_factor");
    });
    with(s, "max_region_pixels", [&](const json& v) {
      c.krige.max_region_pixels = get_count(v, "krige.max_region_pixels");
      if (c.krige.max_region_pixels < 1) throw ConfigError("krige.max_region_pixels must be at least 1");
    });
    with(s, "include_background", [&](const json& v) { c.krige.include_background = get_bool(v, "krige.include_background"); });
    with(s, "nugget_field_sq", [&](const json& v) {
      c.krige.nugget_field_sq = get_number(v, "krige.nugget_field_sq");
      if (c.krige.nugget_field_sq < 0.0) throw ConfigError("krige.nugget_field_sq must be non-negative");
    });
  });

  with(doc, "verify", [&](const json& s) {
    check_keys(s, "verify",
               {"grid_rows_px", "grid_cols_px", "pixel_size_m", "field_rows", "field_cols", "road_width_px",
                "n_replicates", "sigma_sensor_field", "sigma_range_field", "ell_range_px", "estimate_params", "mle_scenes",
                "max_region_pixels", "write_figures"});
    auto& vf = c.verify;
    with(s, "grid_rows_px", [&](const json& v) { vf.grid_rows_px = get_count(v, "verify.grid_rows_px"); });
    with(s, "grid_cols_px", [&](const json& v) { vf.grid_cols_px = get_count(v, "verify.grid_cols_px"); });
    with(s, "pixel_size_m", [&](const json& v) { vf.pixel_size_m = get_positive(v, "verify.pixel_size_m"); });
    with(s, "field_rows", [&](const json& v) { vf.field_rows = get_count(v, "verify.field_rows"); });
    with(s, "field_cols", [&](const json& v) { vf.field_cols = get_count(v, "verify.field_cols"); });
    with(s, "road_width_px", [&](const json& v) { vf.road_width_px = get_count(v, "verify.road_width_px"); });
    with(s, "n_replicates", [&](const json& v) { vf.n_replicates = get_count(v, "verify.n_replicates"); });
    with(s, "sigma_sensor_field", [&](const json& v) {
      vf.sigma_sensor_field = get_number(v, "verify.sigma_sensor_field");
      if (vf.sigma_sensor_field < 0.0) throw ConfigError("verify.sigma_sensor_field must be non-negative");
    });
    with(s, "sigma_range_field", [&](const json& v) { vf.sigma_range_field = get_range(v, "verify.sigma_range_field"); });
    with(s, "ell_range_px", [&](const json& v) { vf.ell_range_px = get_range(v, "verify.ell_range_px"); });
    with(s, "estimate_params", [&](const json& v) { vf.estimate_params = get_bool(v, "verify.estimate_params"); });
    with(s, "mle_scenes", [&](const json& v) { vf.mle_scenes = get_count(v, "verify.mle_scenes"); });
    with(s, "max_region_pixels", [&](const json& v) { vf.max_region_pixels = get_count(v, "verify.max_region_pixels"); });
    with(s, "write_figures", [&](const json& v) { vf.write_figures = get_bool(v, "verify.write_figures"); });
    if (vf.n_replicates < 1) throw ConfigError("verify.n_replicates must be at least 1");
    if (vf.grid_rows_px < 1 || vf.grid_cols_px < 1) throw ConfigError("verify grid must be at least 1x1 px");
  });

  with(doc, "render", [&](const json& s) {
    check_keys(s, "render", {"input_path", "layer", "palette", "range_field", "output_path"});
    with(s, "input_path", [&](const json& v) { c.render.input_path = path_of(v, "render.input_path"); });
    with(s, "layer", [&](const json& v) { c.render.layer = get_count(v, "render.layer"); });
    with(s, "palette", [&](const json& v) {
      c.render.palette = get_string(v, "render.palette");
      try {
        palette_from_name(c.render.palette);
      } catch (const ArgumentError& e) {
        throw ConfigError(std::string("render.palette: ") + e.what());
      }
    });
    with(s, "range_field", [&](const json& v) { c.render.range_field = get_range(v, "render.range_field"); });
    with(s, "output_path", [&](const json& v) { c.render.output_path = path_of(v, "render.output_path"); });
  });
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
  const std::string text = read_text(file);
  fs::path base = file.parent_path();
  if (base.empty()) base = ".";
  return parse(text, base);
}

double PipelineConfig::sigma_blur_px() const {
  if (blur.sigma_blur_px) return *blur.sigma_blur_px;
  return sigma_blur_from_fwhm(blur.fwhm_m, blur.native_px_m, blur.target_px_m);
}

BlurSpec PipelineConfig::blur_spec() const { return {sigma_blur_px(), blur.sigma_sensor_field}; }

KrigeConfig PipelineConfig::krige_config() const {
  KrigeConfig k;
  k.neighborhood_radius_factor = krige.neighborhood_radius_factor;
  k.max_region_pixels = krige.max_region_pixels;
  k.include_background = krige.include_background;
  k.nugget = krige.nugget_field_sq;
  k.blur = blur_spec();
  return k;
}

fs::path PipelineConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

fs::path PipelineConfig::output(const std::string& name) const { return resolve(out_dir) / name; }

RegionParams ParamsFile::kriging_params() const { return {sigma_lowres, ell_px}; }

void write_params(const ParamsFile& p, const fs::path& path) {
  ojson doc;
  doc["magic"] = kParamsMagic;
  doc["version"] = 1;
  doc["sigma_blur_px"] = p.sigma_blur_px;
  doc["sigma_sensor_field"] = p.sigma_sensor_field;
  doc["variance_estimator"] = p.variance_estimator;
  doc["regions"] = ojson::array();
  for (std::size_t r = 0; r < p.ell_px.size(); ++r) {
    doc["regions"].push_back({{"region", r},
                              {"sigma_hires_field", p.sigma_hires.at(r)},
                              {"ell_px", p.ell_px.at(r)},
                              {"sigma_lowres_field", p.sigma_lowres.at(r)}});
  }
  write_json(path, doc);
}

ParamsFile read_params(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    if (doc.value("magic", "") != kParamsMagic) throw FormatError(path.string() + " is not a parameter file");
    if (doc.at("version").get<int>() != 1) throw FormatError(path.string() + ": unsupported version");
    ParamsFile p;
    p.sigma_blur_px = doc.at("sigma_blur_px").get<double>();
    p.sigma_sensor_field = doc.at("sigma_sensor_field").get<double>();
    p.variance_estimator = doc.at("variance_estimator").get<std::string>();
    const auto& regions = doc.at("regions");
    for (std::size_t r = 0; r < regions.size(); ++r) {
      const auto& row = regions[r];
      if (row.at("region").get<std::size_t>() != r) throw FormatError(path.string() + ": regions out of order");
      p.sigma_hires.push_back(row.at("sigma_hires_field").get<double>());
      p.ell_px.push_back(row.at("ell_px").get<double>());
      p.sigma_lowres.push_back(row.at("sigma_lowres_field").get<double>());
    }
    return p;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Sensor sensor_from_name(const std::string& name) {
  if (name == "hires") return Sensor::Hires;
  if (name == "lowres") return Sensor::Lowres;
  throw ArgumentError("unknown sensor '" + name + "' (expected hires or lowres)");
}

ojson cmd_refine(const PipelineConfig& cfg) {
  if (!cfg.refine.masks_path) throw ConfigError("refine.masks_path is required");
  ojson summary;
  summary["warnings"] = ojson::array();
  const MaskSet masks = read_masks(cfg.resolve(*cfg.refine.masks_path));
  if (masks.masks.empty()) warn(summary, "mask file holds no masks; every pixel is background");
  const Partition p = refine_masks(masks, cfg.refine.min_area_px);
  if (!masks.masks.empty() && p.region_count() == 0) warn(summary, "no mask survived refinement");

  ensure_dir(cfg.output(""));
  write_partition(p, cfg.output("partition.bdgr"));
  ojson stats = ojson::array();
  for (const auto& s : partition_stats(p)) {
    stats.push_back({{"region", s.id},
                     {"area_px", s.area},
                     {"row_min", s.row_min},
                     {"row_max", s.row_max},
                     {"col_min", s.col_min},
                     {"col_max", s.col_max}});
  }
  write_json(cfg.output("partition_stats.json"), {{"n_regions", p.region_count()}, {"regions", stats}});
  render_heatmap(p.to_raster(), cfg.output("partition_labels.png"), Palette::Labels);
  summary["n_masks"] = masks.masks.size();
  summary["n_regions"] = p.region_count();
  summary["outputs"] = {"partition.bdgr", "partition_stats.json", "partition_labels.png"};
  return summary;
}

ojson cmd_fit_mean(const PipelineConfig& cfg, Sensor sensor) {
  const bool hires = sensor == Sensor::Hires;
  const std::string tag = hires ? "hires" : "lowres";
  const auto& fm = cfg.fit_mean;
  const auto& src = hires ? fm.hires_stack_path : fm.lowres_stack_path;
  if (!src) throw ConfigError("fit_mean." + tag + "_stack_path is required");
  ojson summary;
  summary["warnings"] = ojson::array();
  RasterStack stack = read_stack(cfg.resolve(*src));
  // The blurred sensor is modelled on the high-resolution grid; bring it over
  // before fitting so residuals line up with the partition.
  if (!hires && fm.hires_stack_path) {
    const RasterStack target = read_stack(cfg.resolve(*fm.hires_stack_path));
    if (!compatible(stack.geom(), target.geom())) {
      std::vector<Raster> moved;
      for (const auto& layer : stack.layers()) moved.push_back(resample_to_grid(layer, target.geom(), ResampleMethod::Bilinear));
      stack = RasterStack(target.geom(), std::move(moved));
      summary["resampled_to"] = {{"n_rows", target.geom().n_rows}, {"n_cols", target.geom().n_cols}};
    }
  }
  const HarmonicSpec spec = hires ? kAnnualOnly : kAnnualDiurnal;
  const HarmonicModel model = fit_harmonic(stack, spec, cfg.threads);
  std::size_t n_fit = 0;
  for (std::size_t i = 0; i < model.geom().size(); ++i) n_fit += model.fit_valid(i) ? 1 : 0;
  if (n_fit == 0) throw NumericError("no pixel of the " + tag + " stack has enough valid observations to fit");
  if (n_fit < model.geom().size())
    warn(summary, std::to_string(model.geom().size() - n_fit) + " pixels could not be fitted");

  ensure_dir(cfg.output(""));
  write_harmonic(model, cfg.output(tag + "_harmonic.bdgr"));
  write_stack(residuals(stack, model), cfg.output(tag + "_residuals.bdgr"));
  summary["harmonic"] = {{"include_annual", spec.include_annual}, {"include_diurnal", spec.include_diurnal}};
  summary["fitted_pixels"] = n_fit;
  summary["outputs"] = {tag + "_harmonic.bdgr", tag + "_residuals.bdgr"};

  if (fm.cycle_pixel_rowcol) {
    const auto [row, col] = *fm.cycle_pixel_rowcol;
    if (row >= model.geom().n_rows || col >= model.geom().n_cols)
      throw ConfigError("fit_mean.cycle_pixel_rowcol is outside the grid");
    const std::size_t idx = model.geom().index(row, col);
    const auto ts = stack.timestamps();
    std::vector<double> grid;
    for (double t = ts.front(); t <= ts.back(); t += fm.cycle_step_days) grid.push_back(t);
    LineSeries fitted{"fitted mean", cycle_curve(model, row, col, grid)};
    LineSeries observed{"observations", {}};
    for (std::size_t k = 0; k < stack.size(); ++k) {
      if (stack[k].is_valid(idx)) observed.points.emplace_back(ts[k], stack[k][idx]);
    }
    const std::string name = tag + "_cycle.svg";
    write_line_plot_svg({fitted, observed}, cfg.output(name),
                        tag + " harmonic fit at pixel (" + std::to_string(row) + ", " + std::to_string(col) + ")",
                        "time (days)", "value");
    summary["outputs"].push_back(name);
  }
  return summary;
}

ojson cmd_fit_params(const PipelineConfig& cfg) {
  const auto& fp = cfg.fit_params;
  ojson summary;
  summary["warnings"] = ojson::array();
  const Partition p = read_partition(fp.partition_path ? cfg.resolve(*fp.partition_path) : cfg.output("partition.bdgr"));
  const RasterStack hires =
      read_stack(fp.hires_residuals_path ? cfg.resolve(*fp.hires_residuals_path) : cfg.output("hires_residuals.bdgr"));
  if (!compatible(p.geom(), hires.geom())) throw ArgumentError("partition and hires residual geometries differ");
  const std::vector<std::size_t> layers = fp.hires_layers.value_or(all_layers(hires));
  for (std::size_t l : layers) {
    if (l >= hires.size()) throw ConfigError("fit_params.hires_layers index " + std::to_string(l) + " out of range");
  }
  const auto fits = fit_all_regions(p, hires, layers, cfg.mle, cfg.threads);

  ParamsFile params;
  params.sigma_blur_px = cfg.sigma_blur_px();
  params.sigma_sensor_field = cfg.blur.sigma_sensor_field;
  params.variance_estimator = to_string(cfg.variance_estimator);
  for (const auto& f : fits) {
    params.sigma_hires.push_back(f.sigma);
    params.ell_px.push_back(f.ell);
    if (f.degenerate) warn(summary, "region " + std::to_string(f.region) + ": " + f.note);
  }
  params.sigma_lowres = params.sigma_hires;

  ojson lowres_rows = ojson::array();
  std::optional<fs::path> lowres_path = fp.lowres_residuals_path ? std::optional(cfg.resolve(*fp.lowres_residuals_path))
                                                                 : std::nullopt;
  if (!lowres_path && fs::exists(cfg.output("lowres_residuals.bdgr"))) lowres_path = cfg.output("lowres_residuals.bdgr");
  if (lowres_path) {
    const RasterStack lowres = read_stack(*lowres_path);
    if (!compatible(p.geom(), lowres.geom()))
      throw ArgumentError("partition and lowres residual geometries differ; run fit-mean with the hires stack set");
    for (RegionId r = 0; r <= p.region_count(); ++r) {
      std::vector<double> per_layer;
      std::size_t floored = 0;
      for (const auto& layer : lowres.layers()) {
        std::vector<double> y;
        for (std::size_t idx : p.region_pixels(r)) {
          if (layer.is_valid(idx)) y.push_back(layer[idx]);
        }
        if (y.size() < 2) continue;
        const auto est = estimate_blurred_sigma(y, params.ell_px[r], params.sigma_blur_px,
                                                params.sigma_sensor_field, cfg.variance_estimator,
                                                cfg.mle.bounds.sigma_min);
        per_layer.push_back(est.sigma);
        floored += est.floored ? 1 : 0;
      }
      ojson row{{"region", r}, {"n_layers", per_layer.size()}, {"floored_layers", floored}};
      if (per_layer.empty()) {
        warn(summary, "region " + std::to_string(r) + ": no lowres layer with 2+ valid pixels; using the hires sigma");
      } else {
        params.sigma_lowres[r] = aggregate_sigma_estimates(per_layer);
        if (floored > 0) {
          warn(summary, "region " + std::to_string(r) + ": sample variance at or below the sensor variance in " +
                            std::to_string(floored) + " layer(s); sigma floored there");
        }
      }
      row["sigma_lowres_field"] = params.sigma_lowres[r];
      lowres_rows.push_back(std::move(row));
    }
  } else {
    warn(summary, "no lowres residuals given; sigma for the blurred sensor copies the hires fit");
  }

  ensure_dir(cfg.output(""));
  write_params(params, cfg.output("params.json"));
  ojson report;
  report["regions"] = fit_report_json(fits);
  report["lowres_variance"] = lowres_rows;
  report["variance_estimator"] = params.variance_estimator;
  report["sigma_blur_px"] = params.sigma_blur_px;
  report["warnings"] = summary["warnings"];
  write_json(cfg.output("fit_report.json"), report);
  render_heatmap(paint_regions(p, params.sigma_hires, true), cfg.output("param_sigma_hires.png"), Palette::Viridis);
  render_heatmap(paint_regions(p, params.ell_px, true), cfg.output("param_ell.png"), Palette::Viridis);
  render_heatmap(paint_regions(p, params.sigma_lowres, true), cfg.output("param_sigma_lowres.png"), Palette::Viridis);
  summary["n_regions"] = p.region_count();
  summary["outputs"] = {"params.json", "fit_report.json", "param_sigma_hires.png", "param_ell.png",
                        "param_sigma_lowres.png"};
  return summary;
}

ojson cmd_krige(const PipelineConfig& cfg) {
  const auto& kc = cfg.krige;
  ojson summary;
  summary["warnings"] = ojson::array();
  const Partition p = read_partition(kc.partition_path ? cfg.resolve(*kc.partition_path) : cfg.output("partition.bdgr"));
  const ParamsFile params = read_params(kc.params_path ? cfg.resolve(*kc.params_path) : cfg.output("params.json"));
  const RasterStack target =
      read_stack(kc.target_stack_path ? cfg.resolve(*kc.target_stack_path) : cfg.output("lowres_residuals.bdgr"));
  if (kc.target_layer >= target.size())
    throw ConfigError("krige.target_layer " + std::to_string(kc.target_layer) + " out of range");
  if (!compatible(p.geom(), target.geom())) throw ArgumentError("partition and target geometries differ");
  const RegionParams theta = params.kriging_params();
  if (theta.size() != static_cast<std::size_t>(p.region_count()) + 1)
    throw FormatError("parameter file has " + std::to_string(theta.size()) + " regions, partition has " +
                      std::to_string(p.region_count() + 1));

  const KrigeConfig kcfg = cfg.krige_config();
  const KrigeResult kr = krige_all(p, target[kc.target_layer], theta, kcfg, cfg.threads);
  for (const auto& s : kr.skipped) warn(summary, "region " + std::to_string(s.region) + " skipped: " + s.reason);

  ensure_dir(cfg.output(""));
  write_raster(kr.mean, cfg.output("krige_mean.bdgr"));
  write_raster(kr.variance, cfg.output("krige_variance.bdgr"));
  ojson skip = skip_report_json(kr);
  skip["sigma_blur_px"] = kcfg.blur.sigma_blur_px;
  skip["target_layer"] = kc.target_layer;
  write_json(cfg.output("krige_report.json"), skip);
  if (kr.mean.valid_count() > 0) {
    render_heatmap(kr.mean, cfg.output("krige_mean.png"), Palette::Coolwarm, symmetric_range({&kr.mean}));
    render_heatmap(two_sigma_map(kr), cfg.output("krige_two_sigma.png"), Palette::Viridis);
  } else {
    warn(summary, "no pixel was reconstructed; heatmaps not written");
  }
  summary["reconstructed_pixels"] = kr.mean.valid_count();
  summary["outputs"] = {"krige_mean.bdgr", "krige_variance.bdgr", "krige_report.json"};
  return summary;
}

ojson cmd_verify(const PipelineConfig& cfg) {
  const auto& vf = cfg.verify;
  GridGeom g{vf.grid_rows_px, vf.grid_cols_px, vf.pixel_size_m, {0.0, 0.0}};
  Partition p = field_layout(g, vf.field_rows, vf.field_cols, vf.road_width_px);
  const BlurSpec blur{cfg.sigma_blur_px(), vf.sigma_sensor_field};
  SynthSpec spec{g, p, random_region_params(p.region_count(), cfg.seed, vf.sigma_range_field, vf.ell_range_px),
                 blur, cfg.seed, vf.n_replicates};
  spec.max_region_pixels = vf.max_region_pixels;
  VerificationOptions opts;
  opts.estimate_params = vf.estimate_params;
  opts.mle = cfg.mle;
  opts.variant = cfg.variance_estimator;
  opts.mle_scenes = vf.mle_scenes;
  opts.threads = cfg.threads;
  KrigeConfig kcfg = cfg.krige_config();
  kcfg.blur = blur;
  const VerificationReport rep = run_verification(spec, kcfg, opts);

  ensure_dir(cfg.output(""));
  ojson doc = rep.to_json();
  doc["summary"]["seed"] = cfg.seed;
  doc["summary"]["theta_true"] = {{"sigma", spec.theta_true.sigma}, {"ell", spec.theta_true.ell}};
  write_json(cfg.output("verify_report.json"), doc);
  ojson summary;
  summary["warnings"] = ojson::array();
  for (const auto& s : rep.skipped) warn(summary, "region " + std::to_string(s.region) + " skipped: " + s.reason);
  summary["outputs"] = {"verify_report.json"};
  if (vf.write_figures) {
    const std::pair<double, double> range = symmetric_range({&*rep.truth0, &*rep.blurred0});
    const std::vector<std::pair<std::string, const Raster*>> figs = {
        {"verify_truth", &*rep.truth0}, {"verify_blurred", &*rep.blurred0}, {"verify_kriged", &*rep.kriged0}};
    for (const auto& [name, r] : figs) {
      write_raster(*r, cfg.output(name + ".bdgr"));
      render_heatmap(*r, cfg.output(name + ".png"), Palette::Coolwarm, range);
      summary["outputs"].push_back(name + ".bdgr");
      summary["outputs"].push_back(name + ".png");
    }
    write_raster(*rep.two_sigma0, cfg.output("verify_two_sigma.bdgr"));
    if (rep.two_sigma0->valid_count() > 0)
      render_heatmap(*rep.two_sigma0, cfg.output("verify_two_sigma.png"), Palette::Viridis);
    summary["outputs"].push_back("verify_two_sigma.bdgr");
    summary["outputs"].push_back("verify_two_sigma.png");
  }
  summary["median_rmse_blurred"] = rep.median_rmse_blurred;
  summary["median_rmse_kriged"] = rep.median_rmse_kriged;
  summary["coverage_2sigma"] = rep.pooled_coverage_2sigma;
  summary["all_replicates_improved"] = rep.all_replicates_improved;
  return summary;
}

ojson cmd_render(const PipelineConfig& cfg) {
  const auto& rc = cfg.render;
  if (!rc.input_path) throw ConfigError("render.input_path is required");
  const fs::path in = cfg.resolve(*rc.input_path);
  // Single rasters and layered files share the header line; only the latter
  // carry "n_layers".
  std::string first_line;
  {
    std::ifstream f(in, std::ios::binary);
    if (!f) throw IoError("cannot open " + in.string());
    std::getline(f, first_line);
  }
  const json header = json::parse(first_line, nullptr, false);
  LayeredRaster lr;
  if (header.is_object() && header.contains("n_layers")) {
    lr = read_layered(in);
  } else {
    Raster r = read_raster(in);
    lr = LayeredRaster{r.geom(), "raster", {r}};
  }
  if (rc.layer >= lr.layers.size())
    throw ConfigError("render.layer " + std::to_string(rc.layer) + " out of range (" +
                      std::to_string(lr.layers.size()) + " layers)");
  Palette pal = palette_from_name(rc.palette);
  if (lr.role == "partition-labels") pal = Palette::Labels;
  fs::path out = rc.output_path ? cfg.resolve(*rc.output_path) : cfg.output(in.stem().string() + ".png");
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  render_heatmap(lr.layers[rc.layer], out, pal, rc.range_field);
  return {{"warnings", ojson::array()}, {"outputs", {out.string()}}};
}

int exit_code(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Io: return 3;
    case ErrorCategory::Format: return 4;
    case ErrorCategory::Numeric: return 5;
    case ErrorCategory::Argument: return 6;
  }
  return 1;
}

}  // namespace bdgp
