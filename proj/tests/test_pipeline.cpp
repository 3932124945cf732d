#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "bdgp/estimate.hpp"
#include "bdgp/meanfit.hpp"
#include "bdgp/partition.hpp"
#include "bdgp/pipeline.hpp"
#include "bdgp/raster_io.hpp"
#include "bdgp/synth.hpp"
#include "oracles.hpp"

using namespace bdgp;

namespace {

// Fresh scratch directory per test case, removed on scope exit.
struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("bdgp_pipeline_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const std::string& text) {
  try {
    PipelineConfig::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

PipelineConfig config_in(const fs::path& dir) {
  PipelineConfig c;
  c.base_dir = dir;
  c.out_dir = "out";
  return c;
}

// Stack of residual-like draws from the latent model on a small field layout.
RasterStack latent_stack(const Partition& p, const RegionParams& theta, std::size_t n, std::uint64_t seed) {
  return sample_bdgp(SynthSpec{p.geom(), p, theta, BlurSpec{}, seed, n});
}

double dist(const GridGeom& g, std::size_t a, std::size_t b) {
  return std::hypot(double(g.row_of(a)) - double(g.row_of(b)), double(g.col_of(a)) - double(g.col_of(b)));
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults") {
    const auto c = PipelineConfig::parse("{}");
    CHECK(c.seed == 0);
    CHECK(c.threads == 1);
    CHECK(c.sigma_blur_px() == doctest::Approx(0.970653).epsilon(1e-6));
    CHECK(c.variance_estimator == InflationVariant::Spectral);
    CHECK(c.mle.grad_tol == 1e-3);
  }
  SUBCASE("values and overrides") {
    const auto c = PipelineConfig::parse(R"({
      "seed": 17, "threads": 3, "variance_estimator": "double-blur",
      "blur": {"fwhm_m": 160, "native_px_m": 70, "target_px_m": 30, "sigma_sensor_field": 0.2},
      "mle": {"nugget_field_sq": 1e-6, "ell_max_px": 50},
      "krige": {"include_background": true, "target_layer": 2},
      "verify": {"sigma_range_field": [1, 2], "write_figures": false}
    })");
    CHECK(c.seed == 17);
    CHECK(c.threads == 3);
    CHECK(c.variance_estimator == InflationVariant::DoubleBlur);
    CHECK(c.sigma_blur_px() == doctest::Approx(160.0 / (30.0 * 2.0 * std::sqrt(2.0 * std::log(2.0)))));
    CHECK(c.blur_spec().sigma_sensor == 0.2);
    CHECK(c.mle.nugget == 1e-6);
    CHECK(c.mle.bounds.ell_max == 50.0);
    CHECK(c.krige_config().include_background);
    CHECK(c.krige.target_layer == 2);
    CHECK(c.verify.sigma_range_field == std::pair<double, double>{1.0, 2.0});
    CHECK_FALSE(c.verify.write_figures);
    CHECK(PipelineConfig::parse(R"({"blur": {"sigma_blur_px": 0}})").sigma_blur_px() == 0.0);
  }
  SUBCASE("unknown keys name their path") {
    CHECK(config_error(R"({"colour": 1})").find("unknown key 'config.colour'") != std::string::npos);
    const auto msg = config_error(R"({"blur": {"fwhm": 160}})");
    CHECK(msg.find("blur.fwhm") != std::string::npos);
    CHECK(msg.find("did you mean 'fwhm_m'") != std::string::npos);
    CHECK(config_error(R"({"verify": {"pixel_size": 70}})").find("pixel_size_m") != std::string::npos);
  }
  SUBCASE("type and range errors") {
    CHECK_FALSE(config_error(R"({"seed": "one"})").empty());
    CHECK_FALSE(config_error(R"({"blur": {"fwhm_m": -1}})").empty());
    CHECK_FALSE(config_error(R"({"blur": {"sigma_blur_px": -0.5}})").empty());
    CHECK_FALSE(config_error(R"({"mle": {"ell_min_px": 10, "ell_max_px": 5}})").empty());
    CHECK_FALSE(config_error(R"({"variance_estimator": "fancy"})").empty());
    CHECK_FALSE(config_error(R"({"render": {"palette": "rainbow"}})").empty());
    CHECK_FALSE(config_error(R"({"verify": {"n_replicates": 0}})").empty());
    CHECK_FALSE(config_error(R"({"fit_mean": {"cycle_pixel_rowcol": [1]}})").empty());
    CHECK_FALSE(config_error("[1, 2]").empty());
    CHECK_FALSE(config_error("{ not json").empty());
  }
  SUBCASE("files resolve against the config directory") {
    ScratchDir dir("load");
    fs::create_directories(dir.path / "cfg");
    std::ofstream(dir.path / "cfg" / "run.json") << R"({"out_dir": "results", "refine": {"masks_path": "m.json"}})";
    const auto c = PipelineConfig::load(dir.path / "cfg" / "run.json");
    CHECK(c.resolve(*c.refine.masks_path) == dir.path / "cfg" / "m.json");
    CHECK(c.output("x.bdgr") == dir.path / "cfg" / "results" / "x.bdgr");
    CHECK(c.resolve("/abs/file") == fs::path("/abs/file"));
    CHECK_THROWS_AS(PipelineConfig::load(dir.path / "missing.json"), IoError);
  }
}

TEST_CASE("parameter files") {
  ScratchDir dir("params");
  ParamsFile p;
  p.sigma_blur_px = 0.97;
  p.sigma_sensor_field = 0.1;
  p.variance_estimator = "double-blur";
  p.sigma_hires = {0.0, 1.25, 2.5};
  p.ell_px = {1.0, 3.0, 0.1 + 0.2};
  p.sigma_lowres = {0.0, 1.0 / 3.0, 2.0};
  write_params(p, dir.path / "p.json");
  const auto q = read_params(dir.path / "p.json");
  CHECK(q.sigma_blur_px == p.sigma_blur_px);
  CHECK(q.variance_estimator == p.variance_estimator);
  CHECK(q.sigma_hires == p.sigma_hires);
  CHECK(q.ell_px == p.ell_px);
  CHECK(q.sigma_lowres == p.sigma_lowres);
  CHECK(q.kriging_params().sigma == p.sigma_lowres);

  std::ofstream(dir.path / "bad.json") << R"({"magic": "NOPE"})";
  CHECK_THROWS_AS(read_params(dir.path / "bad.json"), FormatError);
  std::ofstream(dir.path / "trunc.json") << "{";
  CHECK_THROWS_AS(read_params(dir.path / "trunc.json"), FormatError);
  CHECK_THROWS_AS(read_params(dir.path / "none.json"), IoError);
}

TEST_CASE("exit codes") {
  CHECK(exit_code(ErrorCategory::Config) == 2);
  CHECK(exit_code(ErrorCategory::Io) == 3);
  CHECK(exit_code(ErrorCategory::Format) == 4);
  CHECK(exit_code(ErrorCategory::Numeric) == 5);
  CHECK(exit_code(ErrorCategory::Argument) == 6);
  CHECK(sensor_from_name("hires") == Sensor::Hires);
  CHECK(sensor_from_name("lowres") == Sensor::Lowres);
  CHECK_THROWS_AS(sensor_from_name("radar"), ArgumentError);
}

TEST_CASE("refine") {
  ScratchDir dir("refine");
  auto cfg = config_in(dir.path);
  CHECK_THROWS_AS(cmd_refine(cfg), ConfigError);

  cfg.refine.masks_path = fs::path(BDGP_FIXTURES) / "three_masks.json";
  cfg.refine.min_area_px = 20;
  const auto s = cmd_refine(cfg);
  const Partition want = refine_masks(read_masks(*cfg.refine.masks_path), 20);
  const Partition got = read_partition(cfg.output("partition.bdgr"));
  CHECK(std::ranges::equal(got.labels(), want.labels()));
  CHECK(s["n_masks"] == 3);
  CHECK(s["n_regions"] == want.region_count());
  CHECK(s["warnings"].empty());
  CHECK(fs::exists(cfg.output("partition_stats.json")));
  CHECK(fs::exists(cfg.output("partition_labels.png")));

  const std::string first = slurp(cfg.output("partition.bdgr"));
  cmd_refine(cfg);
  CHECK(slurp(cfg.output("partition.bdgr")) == first);

  cfg.refine.masks_path = fs::path(BDGP_FIXTURES) / "empty_masks.json";
  const auto e = cmd_refine(cfg);
  CHECK(e["n_regions"] == 0);
  REQUIRE(e["warnings"].size() == 1);
  CHECK(e["warnings"][0].get<std::string>().find("no masks") != std::string::npos);

  cfg.refine.masks_path = fs::path(BDGP_FIXTURES) / "overrun_masks.json";
  CHECK_THROWS_AS(cmd_refine(cfg), FormatError);
  cfg.refine.masks_path = dir.path / "absent.json";
  CHECK_THROWS_AS(cmd_refine(cfg), IoError);
}

TEST_CASE("fit-mean removes an exact harmonic signal") {
  ScratchDir dir("fitmean");
  GridGeom g{6, 7, 30.0, {0, 0}};
  // Annual cycle everywhere, plus a diurnal term that only the lowres preset models.
  auto field = [&](std::size_t i, double t, bool diurnal) {
    const double w = 2.0 * std::numbers::pi * t / 365.0;
    double v = 10.0 + 0.1 * double(i) + 3.0 * std::cos(w) - 1.5 * std::sin(w);
    if (diurnal) v += 0.7 * std::cos(2.0 * std::numbers::pi * t) + 0.2 * std::sin(2.0 * std::numbers::pi * t);
    return v;
  };
  auto stack = [&](bool diurnal, double t0, double dt) {
    std::vector<Raster> layers;
    for (int k = 0; k < 15; ++k) {
      const double t = t0 + dt * k;
      std::vector<double> v(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) v[i] = field(i, t, diurnal);
      layers.push_back(Raster::from_values(g, v, t));
    }
    return RasterStack(g, std::move(layers));
  };
  write_stack(stack(false, 3.0, 16.0), dir.path / "hires.bdgr");
  write_stack(stack(true, 0.3, 7.37), dir.path / "lowres.bdgr");

  auto cfg = config_in(dir.path);
  CHECK_THROWS_AS(cmd_fit_mean(cfg, Sensor::Hires), ConfigError);
  cfg.fit_mean.hires_stack_path = "hires.bdgr";
  cfg.fit_mean.lowres_stack_path = "lowres.bdgr";
  cfg.fit_mean.cycle_pixel_rowcol = std::array<std::size_t, 2>{2, 3};

  for (Sensor s : {Sensor::Hires, Sensor::Lowres}) {
    const bool hires = s == Sensor::Hires;
    const std::string tag = hires ? "hires" : "lowres";
    const auto summary = cmd_fit_mean(cfg, s);
    CHECK(summary["harmonic"]["include_annual"] == true);
    CHECK(summary["harmonic"]["include_diurnal"] == !hires);
    CHECK(summary["fitted_pixels"] == g.size());
    CHECK(fs::exists(cfg.output(tag + "_cycle.svg")));
    const auto res = read_stack(cfg.output(tag + "_residuals.bdgr"));
    REQUIRE(res.size() == 15);
    double worst = 0.0;
    for (const auto& layer : res.layers())
      for (double v : layer.values()) worst = std::max(worst, std::abs(v));
    CHECK(worst <= 1e-8);
    const auto model = read_harmonic(cfg.output(tag + "_harmonic.bdgr"));
    CHECK(model.spec() == (hires ? kAnnualOnly : kAnnualDiurnal));
  }

  cfg.fit_mean.cycle_pixel_rowcol = std::array<std::size_t, 2>{6, 0};
  CHECK_THROWS_AS(cmd_fit_mean(cfg, Sensor::Hires), ConfigError);
}

TEST_CASE("fit-params") {
  ScratchDir dir("fitparams");
  GridGeom g{16, 16, 70.0, {0, 0}};
  const Partition p = field_layout(g, 2, 2, 2);
  RegionParams theta{std::vector<double>(p.region_count() + 1, 1.5), std::vector<double>(p.region_count() + 1, 2.0)};
  write_partition(p, dir.path / "partition.bdgr");
  write_stack(latent_stack(p, theta, 3, 5), dir.path / "hires_res.bdgr");

  auto cfg = config_in(dir.path);
  cfg.fit_params.partition_path = "partition.bdgr";
  cfg.fit_params.hires_residuals_path = "hires_res.bdgr";

  SUBCASE("without lowres residuals the hires sigma is reused") {
    const auto s = cmd_fit_params(cfg);
    REQUIRE(s["warnings"].size() >= 1);
    CHECK(s["warnings"].back().get<std::string>().find("no lowres residuals") != std::string::npos);
    const auto params = read_params(cfg.output("params.json"));
    CHECK(params.sigma_lowres == params.sigma_hires);
    REQUIRE(params.ell_px.size() == p.region_count() + 1);
    for (RegionId r = 1; r <= p.region_count(); ++r) {
      CHECK(params.ell_px[r] > 0.5);
      CHECK(params.ell_px[r] < 8.0);
    }
    CHECK(fs::exists(cfg.output("fit_report.json")));
  }
  SUBCASE("a single lowres slice sets sigma directly") {
    const auto lowres = sample_bdgp(SynthSpec{g, p, theta, BlurSpec{0.97, 0.1}, 9, 1});
    write_stack(lowres, dir.path / "lowres_res.bdgr");
    cfg.fit_params.lowres_residuals_path = "lowres_res.bdgr";
    cmd_fit_params(cfg);
    const auto params = read_params(cfg.output("params.json"));
    for (RegionId r = 1; r <= p.region_count(); ++r) {
      std::vector<double> y;
      for (std::size_t idx : p.region_pixels(r)) y.push_back(lowres[0][idx]);
      const auto est = estimate_blurred_sigma(y, params.ell_px[r], cfg.sigma_blur_px(), cfg.blur.sigma_sensor_field,
                                              InflationVariant::Spectral, cfg.mle.bounds.sigma_min);
      CHECK(params.sigma_lowres[r] == est.sigma);
    }
  }
  SUBCASE("sensor-dominated slices are floored with a warning") {
    std::vector<Raster> layers;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    for (int k = 0; k < 2; ++k) {
      std::vector<double> v(g.size());
      for (double& x : v) x = 1e-3 * n01(rng);
      layers.push_back(Raster::from_values(g, v, double(k)));
    }
    write_stack(RasterStack(g, std::move(layers)), dir.path / "quiet.bdgr");
    cfg.fit_params.lowres_residuals_path = "quiet.bdgr";
    const auto s = cmd_fit_params(cfg);
    bool floored = false;
    for (const auto& w : s["warnings"]) floored |= w.get<std::string>().find("floored") != std::string::npos;
    CHECK(floored);
    const auto params = read_params(cfg.output("params.json"));
    CHECK(params.sigma_lowres[1] == cfg.mle.bounds.sigma_min);
  }
  SUBCASE("bad layer selection") {
    cfg.fit_params.hires_layers = std::vector<std::size_t>{0, 7};
    CHECK_THROWS_AS(cmd_fit_params(cfg), ConfigError);
  }
  SUBCASE("mismatched geometry") {
    write_stack(latent_stack(field_layout(GridGeom{12, 16, 70.0, {0, 0}}, 2, 2, 2), theta, 1, 1),
                dir.path / "other.bdgr");
    cfg.fit_params.hires_residuals_path = "other.bdgr";
    CHECK_THROWS_AS(cmd_fit_params(cfg), ArgumentError);
  }
}

TEST_CASE("krige") {
  ScratchDir dir("krige");
  GridGeom g{10, 10, 70.0, {0, 0}};
  std::vector<RegionId> labels(g.size(), 0);
  for (std::size_t r = 1; r < 9; ++r)
    for (std::size_t c = 1; c < 5; ++c) labels[g.index(r, c)] = 1;
  for (std::size_t r = 2; r < 8; ++r)
    for (std::size_t c = 6; c < 10; ++c) labels[g.index(r, c)] = 2;
  const Partition p(g, labels);
  write_partition(p, dir.path / "partition.bdgr");

  ParamsFile params;
  params.sigma_blur_px = 0.0;
  params.sigma_sensor_field = 0.05;
  params.sigma_hires = {1.0, 1.2, 0.8};
  params.ell_px = {2.0, 1.7, 2.4};
  params.sigma_lowres = {1.0, 1.1, 0.9};
  write_params(params, dir.path / "params.json");

  std::mt19937_64 rng(21);
  std::normal_distribution<double> n01;
  std::vector<double> v(g.size());
  for (double& x : v) x = n01(rng);
  v[g.index(4, 2)] = std::nan("");
  std::vector<Raster> layers{Raster::filled(g, 0.0, 0.0), Raster::from_values(g, v, 1.0)};
  write_stack(RasterStack(g, layers), dir.path / "target.bdgr");

  auto cfg = config_in(dir.path);
  cfg.blur.sigma_blur_px = 0.0;
  cfg.blur.sigma_sensor_field = 0.05;
  cfg.krige.nugget_field_sq = 0.0;
  cfg.krige.partition_path = "partition.bdgr";
  cfg.krige.params_path = "params.json";
  cfg.krige.target_stack_path = "target.bdgr";
  cfg.krige.target_layer = 1;

  const auto s = cmd_krige(cfg);
  const auto mean = read_raster(cfg.output("krige_mean.bdgr"));
  const auto var = read_raster(cfg.output("krige_variance.bdgr"));
  CHECK(s["reconstructed_pixels"] == mean.valid_count());
  CHECK(fs::exists(cfg.output("krige_report.json")));

  SUBCASE("background stays invalid by default") {
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(mean.is_valid(i) == (labels[i] != 0));
      CHECK(var.is_valid(i) == (labels[i] != 0));
    }
  }
  SUBCASE("matches textbook regression without blur") {
    const auto theta = params.kriging_params();
    const double noise = 0.05 * 0.05;
    for (RegionId r = 1; r <= 2; ++r) {
      const auto& t = p.region_pixels(r);
      std::vector<std::size_t> o;
      for (std::size_t idx : t)
        if (!std::isnan(v[idx])) o.push_back(idx);
      const auto m = Eigen::Index(o.size()), nt = Eigen::Index(t.size());
      const double s2 = theta.sigma[r] * theta.sigma[r], l2 = theta.ell[r] * theta.ell[r];
      auto k = [&](std::size_t a, std::size_t b) { return s2 * std::exp(-dist(g, a, b) * dist(g, a, b) / (2 * l2)); };
      Eigen::MatrixXd ko(m, m), kc(m, nt);
      Eigen::VectorXd y(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        y(i) = v[o[i]];
        for (Eigen::Index j = 0; j < m; ++j) ko(i, j) = k(o[i], o[j]);
        for (Eigen::Index j = 0; j < nt; ++j) kc(i, j) = k(o[i], t[j]);
      }
      const auto want = oracle::gp_regression(ko, kc, Eigen::VectorXd::Constant(nt, s2), y, noise);
      for (Eigen::Index j = 0; j < nt; ++j) {
        CHECK(std::abs(mean[t[j]] - want.mean(j)) <= 1e-10);
        CHECK(std::abs(var[t[j]] - want.var(j)) <= 1e-10);
      }
    }
  }
  SUBCASE("reruns are bit-identical across thread counts") {
    const std::string a = slurp(cfg.output("krige_mean.bdgr"));
    cfg.threads = 4;
    cmd_krige(cfg);
    CHECK(slurp(cfg.output("krige_mean.bdgr")) == a);
  }
  SUBCASE("background on request") {
    cfg.krige.include_background = true;
    cmd_krige(cfg);
    CHECK(read_raster(cfg.output("krige_mean.bdgr")).valid_count() == g.size());
  }
  SUBCASE("input errors") {
    cfg.krige.target_layer = 2;
    CHECK_THROWS_AS(cmd_krige(cfg), ConfigError);
    cfg.krige.target_layer = 0;
    params.ell_px.pop_back();
    params.sigma_hires.pop_back();
    params.sigma_lowres.pop_back();
    write_params(params, dir.path / "short.json");
    cfg.krige.params_path = "short.json";
    CHECK_THROWS_AS(cmd_krige(cfg), FormatError);
  }
}

TEST_CASE("verify") {
  ScratchDir dir("verify");
  auto cfg = config_in(dir.path);
  cfg.verify.grid_rows_px = 32;
  cfg.verify.grid_cols_px = 32;
  cfg.verify.field_cols = 2;
  cfg.verify.n_replicates = 4;
  cfg.verify.ell_range_px = {1.5, 3.0};

  const auto s = cmd_verify(cfg);
  CHECK(s["all_replicates_improved"] == true);
  CHECK(s["median_rmse_kriged"].get<double>() < s["median_rmse_blurred"].get<double>());
  for (const char* f : {"verify_report.json", "verify_truth.png", "verify_blurred.png", "verify_kriged.png",
                        "verify_two_sigma.png"})
    CHECK(fs::exists(cfg.output(f)));
  const std::string report = slurp(cfg.output("verify_report.json"));

  SUBCASE("same seed, same bytes") {
    cfg.threads = 3;
    cmd_verify(cfg);
    CHECK(slurp(cfg.output("verify_report.json")) == report);
    CHECK(slurp(cfg.output("verify_kriged.bdgr")).size() > 0);
  }
  SUBCASE("another seed changes the report") {
    cfg.seed = 1;
    cmd_verify(cfg);
    CHECK(slurp(cfg.output("verify_report.json")) != report);
  }
  SUBCASE("no blur and no noise reconstructs the truth") {
    cfg.blur.sigma_blur_px = 0.0;
    cfg.verify.sigma_sensor_field = 0.0;
    cfg.krige.nugget_field_sq = 0.0;
    cfg.verify.write_figures = false;
    cfg.verify.ell_range_px = {0.5, 1.0};
    const auto z = cmd_verify(cfg);
    CHECK(z["median_rmse_kriged"].get<double>() <= 1e-6);
    CHECK(z["median_rmse_blurred"].get<double>() == 0.0);
  }
}
