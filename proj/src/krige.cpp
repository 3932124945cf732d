#include "bdgp/krige.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "bdgp/error.hpp"
#include "bdgp/parallel.hpp"

namespace bdgp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kVarianceRoundoff = 1e-10;

}  // namespace

void KrigeConfig::validate() const {
  if (!(neighborhood_radius_factor > 0.0)) throw ArgumentError("neighborhood_radius_factor must be positive");
  if (max_region_pixels < 1) throw ArgumentError("max_region_pixels must be at least 1");
  if (!(blur.sigma_blur_px >= 0.0) || !(blur.sigma_sensor >= 0.0))
    throw ArgumentError("blur and sensor std must be non-negative");
  if (!(nugget >= 0.0)) throw ArgumentError("nugget must be non-negative");
}

RegionPrediction krige_region(const Partition& p, const Neighborhood& nb, const Raster& obs,
                              const RegionParams& theta, const KrigeConfig& cfg,
                              std::span<const std::size_t> targets) {
  cfg.validate();
  if (!compatible(p.geom(), obs.geom())) throw ArgumentError("observation and partition geometries differ");
  const RegionId r = nb.region_id;
  RegionPrediction out;
  out.region = r;
  if (nb.core_pixels.size() > cfg.max_region_pixels) {
    out.skipped = true;
    out.reason = "region has " + std::to_string(nb.core_pixels.size()) + " pixels, cap is " +
                 std::to_string(cfg.max_region_pixels);
    return out;
  }
  for (std::size_t t : targets) {
    if (t >= p.geom().size() || p.label(t) != r)
      throw ArgumentError("kriging target " + std::to_string(t) + " is outside region " + std::to_string(r));
  }
  const double sigma = theta.sigma.at(r);
  const double ell = theta.ell.at(r);
  if (!(sigma > 0.0) || !(ell > 0.0)) throw ArgumentError("non-positive parameters for region " + std::to_string(r));
  const double b = cfg.blur.sigma_blur_px;
  const double prior_var = sigma * sigma;

  std::vector<std::size_t> obs_px;
  for (std::size_t idx : nb.dilated_pixels) {
    if (p.label(idx) == r && obs.is_valid(idx)) obs_px.push_back(idx);
  }
  out.n_observations = obs_px.size();
  out.mean.assign(targets.size(), 0.0);
  out.variance.assign(targets.size(), prior_var);
  if (obs_px.empty()) return out;

  const double noise = cfg.blur.sigma_sensor * cfg.blur.sigma_sensor + cfg.nugget;
  const CovMatrix k = assemble_cov(obs_px, p.geom(), p.labels(), theta, CovMode::DoubleBlurred, b, noise);

  const auto m = static_cast<Eigen::Index>(obs_px.size());
  const auto n_t = static_cast<Eigen::Index>(targets.size());
  Eigen::VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) y(i) = obs[obs_px[static_cast<std::size_t>(i)]];
  Eigen::MatrixXd k_star(m, n_t);
  for (Eigen::Index j = 0; j < n_t; ++j) {
    const std::size_t t = targets[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < m; ++i) {
      const double d = std::sqrt(pixel_dist2(p.geom(), obs_px[static_cast<std::size_t>(i)], t));
      k_star(i, j) = k_blurred(d, sigma, ell, b);
    }
  }

  // With K = L L^T: mean = (L^-1 k*)^T (L^-1 y), variance = sigma^2 - |L^-1 k*|^2.
  const auto lower = k.cholesky().matrixL();
  const Eigen::VectorXd whitened_y = lower.solve(y);
  const Eigen::MatrixXd whitened_k = lower.solve(k_star);
  const Eigen::VectorXd mean = whitened_k.transpose() * whitened_y;
  const Eigen::VectorXd reduction = whitened_k.colwise().squaredNorm().transpose();
  for (Eigen::Index j = 0; j < n_t; ++j) {
    double v = prior_var - reduction(j);
    if (v < 0.0) {
      if (v < -kVarianceRoundoff) {
        throw NumericError("negative posterior variance " + std::to_string(v) + " in region " + std::to_string(r));
      }
      v = 0.0;
    }
    out.mean[static_cast<std::size_t>(j)] = mean(j);
    out.variance[static_cast<std::size_t>(j)] = v;
  }
  return out;
}

std::vector<Neighborhood> region_neighborhoods(const Partition& p, const KrigeConfig& cfg) {
  cfg.validate();
  std::vector<Neighborhood> out;
  if (cfg.include_background && !p.region_pixels(kBackground).empty()) {
    const auto bg = p.region_pixels(kBackground);
    out.push_back({kBackground, {bg.begin(), bg.end()}, {bg.begin(), bg.end()}});
  }
  const double radius = cfg.neighborhood_radius_factor * cfg.blur.sigma_blur_px;
  for (RegionId r = 1; r <= p.region_count(); ++r) out.push_back(dilate_region(p, r, radius));
  return out;
}

KrigeResult krige_all(const Partition& p, std::span<const Neighborhood> neighborhoods, const Raster& obs,
                      const RegionParams& theta, const KrigeConfig& cfg, unsigned threads) {
  cfg.validate();
  theta.validate(p.region_count());
  if (!compatible(p.geom(), obs.geom())) throw ArgumentError("observation and partition geometries differ");

  std::vector<RegionPrediction> preds(neighborhoods.size());
  parallel_for(neighborhoods.size(), threads, [&](std::size_t k) {
    const Neighborhood& nb = neighborhoods[k];
    try {
      preds[k] = krige_region(p, nb, obs, theta, cfg, nb.core_pixels);
    } catch (const NumericError& e) {
      preds[k].region = nb.region_id;
      preds[k].skipped = true;
      preds[k].reason = e.what();
    }
  });

  const std::size_t n = p.geom().size();
  std::vector<double> mean(n, kNaN), var(n, kNaN);
  std::vector<std::uint8_t> ok(n, 0);
  KrigeResult res{Raster::invalid(p.geom()), Raster::invalid(p.geom()), {}};
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& pr = preds[k];
    if (pr.skipped) {
      res.skipped.push_back({pr.region, pr.reason});
      continue;
    }
    const auto& core = neighborhoods[k].core_pixels;
    for (std::size_t j = 0; j < core.size(); ++j) {
      mean[core[j]] = pr.mean[j];
      var[core[j]] = pr.variance[j];
      ok[core[j]] = 1;
    }
  }
  res.mean = Raster(p.geom(), std::move(mean), ok, obs.timestamp_days());
  res.variance = Raster(p.geom(), std::move(var), std::move(ok), obs.timestamp_days());
  return res;
}

KrigeResult krige_all(const Partition& p, const Raster& obs, const RegionParams& theta, const KrigeConfig& cfg,
                      unsigned threads) {
  const auto nbs = region_neighborhoods(p, cfg);
  return krige_all(p, nbs, obs, theta, cfg, threads);
}

Raster two_sigma_map(const KrigeResult& kr) {
  const Raster& v = kr.variance;
  const std::size_t n = v.geom().size();
  std::vector<double> out(n, kNaN);
  for (std::size_t i = 0; i < n; ++i) {
    if (v.is_valid(i)) out[i] = 2.0 * std::sqrt(std::max(v[i], 0.0));
  }
  return Raster(v.geom(), std::move(out), {v.valid().begin(), v.valid().end()}, v.timestamp_days());
}

nlohmann::ordered_json skip_report_json(const KrigeResult& kr) {
  nlohmann::ordered_json doc;
  doc["skipped_regions"] = nlohmann::ordered_json::array();
  for (const auto& s : kr.skipped) doc["skipped_regions"].push_back({{"region", s.region}, {"reason", s.reason}});
  doc["reconstructed_pixels"] = kr.mean.valid_count();
  return doc;
}

}  // namespace bdgp
