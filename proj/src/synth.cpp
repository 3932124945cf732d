#include "bdgp/synth.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "bdgp/error.hpp"
#include "bdgp/parallel.hpp"
#include "bdgp/rng.hpp"

namespace bdgp {

namespace {

constexpr double kCoverageSlack = 1e-9;

// Purpose tags mixed into stream seeds so that different uses of the master
// seed never share a stream.
constexpr std::uint64_t kStreamField = 0x6669656c64ull;
constexpr std::uint64_t kStreamNoise = 0x6e6f697365ull;
constexpr std::uint64_t kStreamParams = 0x706172616dull;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// One separable pass of the blur along rows (horizontal) or columns.
// `bad` counts invalid inputs in the window so the caller can invalidate.
void blur_pass(const GridGeom& g, const std::vector<double>& w, bool periodic, bool along_cols,
               const std::vector<double>& in, const std::vector<std::uint32_t>& bad_in, std::vector<double>& out,
               std::vector<std::uint32_t>& bad_out) {
  const auto radius = static_cast<std::ptrdiff_t>(w.size() / 2);
  const auto len = static_cast<std::ptrdiff_t>(along_cols ? g.n_cols : g.n_rows);
  const std::size_t lines = along_cols ? g.n_rows : g.n_cols;
  double full = 0.0;
  for (double x : w) full += x;
  for (std::size_t line = 0; line < lines; ++line) {
    auto at = [&](std::ptrdiff_t pos) {
      return along_cols ? g.index(line, static_cast<std::size_t>(pos)) : g.index(static_cast<std::size_t>(pos), line);
    };
    for (std::ptrdiff_t pos = 0; pos < len; ++pos) {
      double acc = 0.0;
      double norm = 0.0;
      std::uint32_t bad = 0;
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        std::ptrdiff_t q = pos + d;
        if (periodic) {
          q = ((q % len) + len) % len;
        } else if (q < 0 || q >= len) {
          continue;
        }
        const double wd = w[static_cast<std::size_t>(d + radius)];
        const std::size_t idx = at(q);
        acc += wd * in[idx];
        norm += wd;
        bad += bad_in[idx];
      }
      const std::size_t o = at(pos);
      out[o] = acc / (periodic ? full : norm);
      bad_out[o] = bad;
    }
  }
}

double median_of(std::vector<double> v) { return aggregate_sigma_estimates(v); }

}  // namespace

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0, 1]: 1 - u avoids log(0).
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(phi);
  has_spare_ = true;
  return r * std::cos(phi);
}

void SynthSpec::validate() const {
  geom.validate();
  if (!compatible(geom, partition.geom())) throw ArgumentError("partition geometry differs from the synthetic grid");
  theta_true.validate(partition.region_count());
  if (!(blur.sigma_blur_px >= 0.0) || !(blur.sigma_sensor >= 0.0))
    throw ArgumentError("blur and sensor std must be non-negative");
  if (n_replicates < 1) throw ArgumentError("n_replicates must be at least 1");
  if (!(jitter >= 0.0)) throw ArgumentError("jitter must be non-negative");
}

RasterStack sample_bdgp(const SynthSpec& spec, unsigned threads) {
  spec.validate();
  const GridGeom& g = spec.geom;
  const Partition& p = spec.partition;
  const RegionId n_ids = p.region_count() + 1;
  for (RegionId r = 0; r < n_ids; ++r) {
    const std::size_t n = p.region_pixels(r).size();
    if (n > spec.max_region_pixels) {
      throw ArgumentError("region " + std::to_string(r) + " has " + std::to_string(n) +
                          " pixels, above the sampling cap of " + std::to_string(spec.max_region_pixels));
    }
  }

  std::vector<std::vector<double>> fields(spec.n_replicates, std::vector<double>(g.size(), 0.0));
  // Sample on the unit-variance correlation and scale by sigma afterwards, so
  // the jitter is relative to the region variance.
  RegionParams unit{std::vector<double>(n_ids, 1.0), spec.theta_true.ell};
  parallel_for(n_ids, threads, [&](std::size_t rr) {
    const auto r = static_cast<RegionId>(rr);
    const auto px = p.region_pixels(r);
    if (px.empty()) return;
    const CovMatrix c = assemble_cov(px, g, p.labels(), unit, CovMode::Latent, 0.0, spec.jitter);
    const Eigen::MatrixXd lower = c.cholesky().matrixL();
    const double sigma = spec.theta_true.sigma[r];
    const auto n = static_cast<Eigen::Index>(px.size());
    Eigen::VectorXd z(n);
    for (std::size_t k = 0; k < spec.n_replicates; ++k) {
      Rng rng(stream_seed(spec.seed, kStreamField, r, k));
      for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
      const Eigen::VectorXd f = lower.triangularView<Eigen::Lower>() * z;
      for (Eigen::Index i = 0; i < n; ++i) fields[k][px[static_cast<std::size_t>(i)]] = sigma * f(i);
    }
  });

  std::vector<Raster> layers;
  layers.reserve(spec.n_replicates);
  for (std::size_t k = 0; k < spec.n_replicates; ++k) {
    layers.push_back(Raster::from_values(g, std::move(fields[k]), static_cast<double>(k)));
  }
  return RasterStack(g, std::move(layers));
}

Raster apply_blur(const Raster& field, double b, BlurBoundary boundary) {
  if (!(b >= 0.0) || !std::isfinite(b)) throw ArgumentError("blur std must be finite and non-negative");
  const auto radius = static_cast<std::size_t>(std::floor(4.0 * b));
  if (b == 0.0 || radius == 0) return field;

  std::vector<double> w(2 * radius + 1);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    w[i] = std::exp(-d * d / (2.0 * b * b));
  }

  const GridGeom& g = field.geom();
  const std::size_t n = g.size();
  std::vector<double> v(n);
  std::vector<std::uint32_t> bad(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = field.is_valid(i) ? field[i] : 0.0;
    bad[i] = field.is_valid(i) ? 0 : 1;
  }
  const bool periodic = boundary == BlurBoundary::Periodic;
  std::vector<double> tmp(n);
  std::vector<std::uint32_t> bad_tmp(n);
  blur_pass(g, w, periodic, true, v, bad, tmp, bad_tmp);
  blur_pass(g, w, periodic, false, tmp, bad_tmp, v, bad);

  std::vector<std::uint8_t> valid(n);
  for (std::size_t i = 0; i < n; ++i) {
    valid[i] = bad[i] == 0 ? 1 : 0;
    if (!valid[i]) v[i] = kNaN;
  }
  return Raster(g, std::move(v), std::move(valid), field.timestamp_days());
}

Raster add_sensor_noise(const Raster& field, double sigma_sensor, std::uint64_t seed) {
  if (!(sigma_sensor >= 0.0) || !std::isfinite(sigma_sensor))
    throw ArgumentError("sensor std must be finite and non-negative");
  if (sigma_sensor == 0.0) return field;
  Rng rng(stream_seed(seed, kStreamNoise));
  const std::size_t n = field.geom().size();
  std::vector<double> v(field.values().begin(), field.values().end());
  for (std::size_t i = 0; i < n; ++i) {
    if (field.is_valid(i)) v[i] += sigma_sensor * rng.normal();
  }
  return Raster(field.geom(), std::move(v), {field.valid().begin(), field.valid().end()}, field.timestamp_days());
}

SynthBundle synthesize(const SynthSpec& spec, unsigned threads) {
  RasterStack truth = sample_bdgp(spec, threads);
  std::vector<Raster> obs(truth.size(), Raster::invalid(spec.geom));
  parallel_for(truth.size(), threads, [&](std::size_t k) {
    const Raster blurred = apply_blur(truth[k], spec.blur.sigma_blur_px);
    obs[k] = add_sensor_noise(blurred, spec.blur.sigma_sensor, stream_seed(spec.seed, kStreamNoise, k));
  });
  RasterStack blurred_obs(spec.geom, std::move(obs));
  return {std::move(truth), std::move(blurred_obs)};
}

Partition field_layout(const GridGeom& geom, std::size_t field_rows, std::size_t field_cols,
                       std::size_t road_width_px) {
  geom.validate();
  if (field_rows < 1 || field_cols < 1) throw ArgumentError("field layout needs at least one row and column");
  auto spans = [&](std::size_t extent, std::size_t count) {
    const std::size_t roads = road_width_px * (count - 1);
    if (extent < roads + count) throw ArgumentError("grid too small for the requested field layout");
    const std::size_t avail = extent - roads;
    // Field index for every position along the axis, or -1 on a road.
    std::vector<std::ptrdiff_t> owner(extent, -1);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < count; ++f) {
      const std::size_t len = avail / count + (f < avail % count ? 1 : 0);
      for (std::size_t i = 0; i < len; ++i) owner[pos++] = static_cast<std::ptrdiff_t>(f);
      pos += road_width_px;
    }
    return owner;
  };
  const auto row_owner = spans(geom.n_rows, field_rows);
  const auto col_owner = spans(geom.n_cols, field_cols);
  std::vector<RegionId> labels(geom.size(), kBackground);
  for (std::size_t r = 0; r < geom.n_rows; ++r) {
    for (std::size_t c = 0; c < geom.n_cols; ++c) {
      if (row_owner[r] < 0 || col_owner[c] < 0) continue;
      labels[geom.index(r, c)] =
          static_cast<RegionId>(static_cast<std::size_t>(row_owner[r]) * field_cols +
                                static_cast<std::size_t>(col_owner[c]) + 1);
    }
  }
  return Partition(geom, std::move(labels));
}

RegionParams random_region_params(RegionId n_regions, std::uint64_t seed, std::pair<double, double> sigma_range,
                                  std::pair<double, double> ell_range) {
  if (!(sigma_range.first > 0.0) || sigma_range.second < sigma_range.first || !(ell_range.first > 0.0) ||
      ell_range.second < ell_range.first) {
    throw ArgumentError("parameter ranges must be positive and ordered");
  }
  Rng rng(stream_seed(seed, kStreamParams));
  RegionParams out;
  for (RegionId r = 0; r <= n_regions; ++r) {
    out.sigma.push_back(rng.uniform(sigma_range.first, sigma_range.second));
    out.ell.push_back(rng.uniform(ell_range.first, ell_range.second));
  }
  return out;
}

VerificationReport run_verification(const SynthSpec& spec, const KrigeConfig& cfg, const VerificationOptions& opts) {
  spec.validate();
  cfg.validate();
  const Partition& p = spec.partition;
  const double b = spec.blur.sigma_blur_px;
  const double s_sensor = spec.blur.sigma_sensor;
  const SynthBundle bundle = synthesize(spec, opts.threads);
  const std::size_t n_rep = spec.n_replicates;

  // Sigma from the blurred observations of region r in replicate k.
  auto blurred_sigma = [&](RegionId r, std::size_t k, double ell, InflationVariant variant) {
    std::vector<double> y;
    for (std::size_t idx : p.region_pixels(r)) {
      if (bundle.blurred_obs[k].is_valid(idx)) y.push_back(bundle.blurred_obs[k][idx]);
    }
    return estimate_blurred_sigma(y, ell, b, s_sensor, variant, opts.mle.bounds.sigma_min).sigma;
  };

  VerificationReport rep;
  if (opts.estimate_params) {
    std::vector<std::size_t> layers(std::min(opts.mle_scenes, n_rep));
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i] = i;
    const auto fits = fit_all_regions(p, bundle.truth, layers, opts.mle, opts.threads);
    rep.params_used.sigma.resize(fits.size());
    rep.params_used.ell.resize(fits.size());
    for (std::size_t r = 0; r < fits.size(); ++r) {
      const auto id = static_cast<RegionId>(r);
      rep.params_used.ell[r] = fits[r].ell;
      rep.params_used.sigma[r] = fits[r].sigma;
      if (p.region_pixels(id).size() < 2) continue;
      std::vector<double> est(n_rep);
      for (std::size_t k = 0; k < n_rep; ++k) est[k] = blurred_sigma(id, k, fits[r].ell, opts.variant);
      rep.params_used.sigma[r] = median_of(std::move(est));
    }
  } else {
    rep.params_used = spec.theta_true;
  }

  const auto nbs = region_neighborhoods(p, cfg);
  std::size_t pooled_in = 0;
  std::size_t pooled_n = 0;
  std::vector<double> reductions;
  rep.all_replicates_improved = true;
  for (std::size_t k = 0; k < n_rep; ++k) {
    const Raster& truth = bundle.truth[k];
    const Raster& obs = bundle.blurred_obs[k];
    KrigeResult kr = krige_all(p, nbs, obs, rep.params_used, cfg, opts.threads);
    if (k == 0) rep.skipped = kr.skipped;
    double se_b = 0.0;
    double se_k = 0.0;
    std::size_t n = 0;
    std::size_t inside = 0;
    for (std::size_t i = 0; i < truth.geom().size(); ++i) {
      if (!kr.mean.is_valid(i) || !obs.is_valid(i)) continue;
      const double eb = obs[i] - truth[i];
      const double ek = kr.mean[i] - truth[i];
      se_b += eb * eb;
      se_k += ek * ek;
      // The slack only matters when the posterior variance has collapsed to
      // zero and the error is pure rounding.
      if (std::abs(ek) <= 2.0 * std::sqrt(kr.variance[i]) + kCoverageSlack * (1.0 + std::abs(truth[i]))) ++inside;
      ++n;
    }
    ReplicateScore s;
    s.replicate = k;
    s.n_pixels = n;
    if (n > 0) {
      s.rmse_blurred = std::sqrt(se_b / static_cast<double>(n));
      s.rmse_kriged = std::sqrt(se_k / static_cast<double>(n));
      s.coverage_2sigma = static_cast<double>(inside) / static_cast<double>(n);
      reductions.push_back(s.rmse_blurred > 0.0 ? 1.0 - s.rmse_kriged / s.rmse_blurred : 0.0);
    }
    if (!(s.rmse_kriged < s.rmse_blurred)) rep.all_replicates_improved = false;
    pooled_in += inside;
    pooled_n += n;
    rep.replicates.push_back(s);
    if (k == 0) {
      rep.truth0 = truth;
      rep.blurred0 = obs;
      rep.two_sigma0 = two_sigma_map(kr);
      rep.kriged0 = std::move(kr.mean);
    }
  }
  if (pooled_n == 0) throw NumericError("verification reconstructed no pixels");

  std::vector<double> rb, rk;
  for (const auto& s : rep.replicates) {
    rb.push_back(s.rmse_blurred);
    rk.push_back(s.rmse_kriged);
  }
  rep.median_rmse_blurred = median_of(rb);
  rep.median_rmse_kriged = median_of(rk);
  rep.median_rmse_reduction = reductions.empty() ? 0.0 : median_of(reductions);
  rep.pooled_coverage_2sigma = static_cast<double>(pooled_in) / static_cast<double>(pooled_n);

  // Variance-estimator study against the known sigma, with the true ell.
  std::vector<RegionId> study_regions;
  for (RegionId r = 1; r <= p.region_count(); ++r) {
    if (p.region_pixels(r).size() >= 2) study_regions.push_back(r);
  }
  if (study_regions.empty() && p.region_pixels(kBackground).size() >= 2) study_regions.push_back(kBackground);
  for (InflationVariant v : {InflationVariant::Spectral, InflationVariant::DoubleBlur}) {
    VariantStudy st{v};
    if (!study_regions.empty()) {
      std::vector<double> ratios;
      for (RegionId r : study_regions) {
        std::vector<double> est(n_rep);
        for (std::size_t k = 0; k < n_rep; ++k) est[k] = blurred_sigma(r, k, spec.theta_true.ell[r], v);
        ratios.push_back(median_of(std::move(est)) / spec.theta_true.sigma[r]);
      }
      st.median_ratio = median_of(std::move(ratios));
      st.within_15pct = std::abs(st.median_ratio - 1.0) <= 0.15;
    }
    rep.variance_study.push_back(st);
  }
  rep.params_mode_estimated = opts.estimate_params;
  rep.sigma_blur_px = b;
  rep.sigma_sensor = s_sensor;
  return rep;
}

nlohmann::ordered_json VerificationReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["replicates"] = nlohmann::ordered_json::array();
  for (const auto& s : replicates) {
    doc["replicates"].push_back({{"replicate", s.replicate},
                                 {"n_pixels", s.n_pixels},
                                 {"rmse_blurred", s.rmse_blurred},
                                 {"rmse_kriged", s.rmse_kriged},
                                 {"coverage_2sigma", s.coverage_2sigma}});
  }
  nlohmann::ordered_json sum;
  sum["n_replicates"] = replicates.size();
  sum["params_mode"] = params_mode_estimated ? "estimated" : "true";
  sum["sigma_blur_px"] = sigma_blur_px;
  sum["sigma_sensor"] = sigma_sensor;
  sum["median_rmse_blurred"] = median_rmse_blurred;
  sum["median_rmse_kriged"] = median_rmse_kriged;
  sum["median_rmse_reduction"] = median_rmse_reduction;
  sum["all_replicates_improved"] = all_replicates_improved;
  sum["coverage_2sigma"] = pooled_coverage_2sigma;
  nlohmann::ordered_json study = nlohmann::ordered_json::array();
  nlohmann::ordered_json matching = nlohmann::ordered_json::array();
  for (const auto& st : variance_study) {
    study.push_back({{"variant", to_string(st.variant)},
                     {"median_sigma_ratio", st.median_ratio},
                     {"within_15pct", st.within_15pct}});
    if (st.within_15pct) matching.push_back(to_string(st.variant));
  }
  sum["variance_estimator_study"] = std::move(study);
  sum["variants_within_15pct"] = std::move(matching);
  sum["params_used"] = {{"sigma", params_used.sigma}, {"ell", params_used.ell}};
  nlohmann::ordered_json skips = nlohmann::ordered_json::array();
  for (const auto& s : skipped) skips.push_back({{"region", s.region}, {"reason", s.reason}});
  sum["skipped_regions"] = std::move(skips);
  doc["summary"] = std::move(sum);
  return doc;
}

}  // namespace bdgp
