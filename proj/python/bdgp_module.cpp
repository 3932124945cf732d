#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bdgp/error.hpp"
#include "bdgp/estimate.hpp"
#include "bdgp/kernel.hpp"
#include "bdgp/krige.hpp"
#include "bdgp/partition.hpp"
#include "bdgp/pipeline.hpp"
#include "bdgp/raster_io.hpp"
#include "bdgp/synth.hpp"

namespace py = pybind11;
using namespace bdgp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

GridGeom unit_geom(py::ssize_t rows, py::ssize_t cols) {
  return GridGeom{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), 1.0, {0.0, 0.0}};
}

// 2-D array with NaN marking invalid pixels.
Raster raster_from(const Array& a, const GridGeom* geom = nullptr) {
  if (a.ndim() != 2) throw ArgumentError("expected a 2-D array");
  const GridGeom g = geom ? *geom : unit_geom(a.shape(0), a.shape(1));
  if (g.n_rows != static_cast<std::size_t>(a.shape(0)) || g.n_cols != static_cast<std::size_t>(a.shape(1)))
    throw ArgumentError("array shape does not match the grid");
  return Raster::from_values(g, std::vector<double>(a.data(), a.data() + a.size()));
}

Array array_from(const Raster& r) {
  Array out({r.geom().n_rows, r.geom().n_cols});
  std::copy(r.values().begin(), r.values().end(), out.mutable_data());
  return out;
}

Partition partition_from(const LabelArray& labels) {
  if (labels.ndim() != 2) throw ArgumentError("labels must be a 2-D array");
  std::vector<RegionId> v(static_cast<std::size_t>(labels.size()));
  for (py::ssize_t i = 0; i < labels.size(); ++i) {
    if (labels.data()[i] < 0) throw ArgumentError("labels must be non-negative");
    v[static_cast<std::size_t>(i)] = static_cast<RegionId>(labels.data()[i]);
  }
  return Partition(unit_geom(labels.shape(0), labels.shape(1)), std::move(v));
}

RegionData region_from(const Array& y, const Array& coords) {
  if (y.ndim() != 2 || coords.ndim() != 2 || coords.shape(1) != 2 || coords.shape(0) != y.shape(0))
    throw ArgumentError("expected y of shape (n, T) and coords of shape (n, 2)");
  RegionData d;
  const auto n = static_cast<Eigen::Index>(y.shape(0));
  d.pixels.resize(static_cast<std::size_t>(n));
  d.coords.resize(n, 2);
  d.y.resize(n, static_cast<Eigen::Index>(y.shape(1)));
  auto yv = y.unchecked<2>();
  auto cv = coords.unchecked<2>();
  for (Eigen::Index i = 0; i < n; ++i) {
    d.pixels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
    d.coords(i, 0) = cv(i, 0);
    d.coords(i, 1) = cv(i, 1);
    for (Eigen::Index t = 0; t < d.y.cols(); ++t) d.y(i, t) = yv(i, t);
  }
  return d;
}

RegionParams params_from(const std::vector<double>& sigma, const std::vector<double>& ell) {
  if (sigma.size() != ell.size()) throw ArgumentError("sigma and ell must have one entry per region id");
  return {sigma, ell};
}

py::object to_py(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_bdgp, m) {
  m.doc() = "Block-diagonal Gaussian process downscaling with blur-aware kriging";

  static py::exception<Error> base(m, "BdgpError", PyExc_RuntimeError);
  py::register_exception<ArgumentError>(m, "ArgumentError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);

  m.def("sigma_blur_from_fwhm", &sigma_blur_from_fwhm, py::arg("fwhm_m"), py::arg("native_px_m"),
        py::arg("target_px_m"));
  m.def("k_se", py::vectorize(&k_se), py::arg("d"), py::arg("sigma"), py::arg("ell"));
  m.def("k_blurred", py::vectorize(&k_blurred), py::arg("d"), py::arg("sigma"), py::arg("ell"), py::arg("b"));
  m.def("k_double_blurred", py::vectorize(&k_double_blurred), py::arg("d"), py::arg("sigma"), py::arg("ell"),
        py::arg("b"));

  m.def(
      "refine_masks",
      [](py::array_t<bool, py::array::c_style | py::array::forcecast> masks, std::size_t min_area) {
        if (masks.ndim() != 3) throw ArgumentError("masks must have shape (n_masks, rows, cols)");
        MaskSet ms{unit_geom(masks.shape(1), masks.shape(2)), {}};
        const std::size_t n = ms.geom.size();
        for (py::ssize_t k = 0; k < masks.shape(0); ++k) {
          const bool* p = masks.data() + k * static_cast<py::ssize_t>(n);
          ms.masks.emplace_back(p, p + n);
        }
        const Partition part = refine_masks(ms, min_area);
        LabelArray out({masks.shape(1), masks.shape(2)});
        std::copy(part.labels().begin(), part.labels().end(), out.mutable_data());
        return out;
      },
      py::arg("masks"), py::arg("min_area") = 100);

  m.def(
      "neg_log_lik",
      [](const Array& y, const Array& coords, double sigma, double ell, double nugget) {
        return neg_log_lik_region(region_from(y, coords), sigma, ell, nugget);
      },
      py::arg("y"), py::arg("coords"), py::arg("sigma"), py::arg("ell"), py::arg("nugget") = 1e-8);

  m.def(
      "fit_region_mle",
      [](const Array& y, const Array& coords, double nugget) {
        MLEConfig cfg;
        cfg.nugget = nugget;
        const RegionFit f = fit_region_mle(region_from(y, coords), cfg);
        py::dict d;
        d["sigma"] = f.sigma;
        d["ell"] = f.ell;
        d["nll"] = f.nll;
        d["iterations"] = f.iterations;
        d["converged"] = f.converged;
        d["ell_identifiable"] = f.ell_identifiable;
        return d;
      },
      py::arg("y"), py::arg("coords"), py::arg("nugget") = 1e-8);

  m.def(
      "estimate_blurred_sigma",
      [](const std::vector<double>& y, double ell, double b, double sigma_sensor, const std::string& variant) {
        const auto e = estimate_blurred_sigma(y, ell, b, sigma_sensor, inflation_variant_from_name(variant));
        return py::make_tuple(e.sigma, e.floored);
      },
      py::arg("y"), py::arg("ell"), py::arg("b"), py::arg("sigma_sensor"), py::arg("variant") = "spectral");

  m.def(
      "apply_blur", [](const Array& field, double b) { return array_from(apply_blur(raster_from(field), b)); },
      py::arg("field"), py::arg("b"));

  m.def(
      "sample_bdgp",
      [](const LabelArray& labels, const std::vector<double>& sigma, const std::vector<double>& ell,
         std::uint64_t seed, std::size_t n_replicates) {
        const Partition p = partition_from(labels);
        SynthSpec spec{p.geom(), p, params_from(sigma, ell), {}, seed, n_replicates};
        const RasterStack s = sample_bdgp(spec);
        Array out({static_cast<py::ssize_t>(s.size()), labels.shape(0), labels.shape(1)});
        double* dst = out.mutable_data();
        for (const auto& layer : s.layers()) dst = std::copy(layer.values().begin(), layer.values().end(), dst);
        return out;
      },
      py::arg("labels"), py::arg("sigma"), py::arg("ell"), py::arg("seed") = 0, py::arg("n_replicates") = 1);

  m.def(
      "krige",
      [](const LabelArray& labels, const Array& obs, const std::vector<double>& sigma, const std::vector<double>& ell,
         double sigma_blur_px, double sigma_sensor, bool include_background, double nugget, unsigned threads) {
        const Partition p = partition_from(labels);
        KrigeConfig cfg;
        cfg.blur = {sigma_blur_px, sigma_sensor};
        cfg.include_background = include_background;
        cfg.nugget = nugget;
        const Raster o = raster_from(obs, &p.geom());
        const RegionParams theta = params_from(sigma, ell);
        std::optional<KrigeResult> kr;
        {
          py::gil_scoped_release release;
          kr.emplace(krige_all(p, o, theta, cfg, threads));
        }
        return py::make_tuple(array_from(kr->mean), array_from(kr->variance));
      },
      py::arg("labels"), py::arg("obs"), py::arg("sigma"), py::arg("ell"), py::arg("sigma_blur_px"),
      py::arg("sigma_sensor"), py::arg("include_background") = false, py::arg("nugget") = 1e-8,
      py::arg("threads") = 1);

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config_json, const std::string& base_dir,
         const std::string& sensor) {
        const PipelineConfig cfg = PipelineConfig::parse(config_json, base_dir);
        nlohmann::ordered_json out;
        {
          py::gil_scoped_release release;
          if (command == "refine") out = cmd_refine(cfg);
          else if (command == "fit-mean") out = cmd_fit_mean(cfg, sensor_from_name(sensor));
          else if (command == "fit-params") out = cmd_fit_params(cfg);
          else if (command == "krige") out = cmd_krige(cfg);
          else if (command == "verify") out = cmd_verify(cfg);
          else if (command == "render") out = cmd_render(cfg);
          else throw ArgumentError("unknown command '" + command + "'");
        }
        return to_py(out);
      },
      py::arg("command"), py::arg("config_json") = "{}", py::arg("base_dir") = ".", py::arg("sensor") = "hires");

  m.def(
      "read_raster", [](const std::string& path) { return array_from(read_raster(path)); }, py::arg("path"));
  m.def(
      "write_raster", [](const Array& a, const std::string& path) { write_raster(raster_from(a), path); },
      py::arg("array"), py::arg("path"));
}
