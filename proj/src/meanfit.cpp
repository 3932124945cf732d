#include "bdgp/meanfit.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>

#include "bdgp/error.hpp"
#include "bdgp/parallel.hpp"
#include "bdgp/raster_io.hpp"

namespace bdgp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kMinReciprocalCondition = 1e-12;
constexpr const char* kHarmonicRole = "harmonic-coeffs";

}  // namespace

std::vector<double> harmonic_basis(const HarmonicSpec& spec, double t_days) {
  std::vector<double> row{1.0};
  row.reserve(spec.n_coeffs());
  if (spec.include_annual) {
    const double a = 2.0 * std::numbers::pi * t_days / kYearDays;
    row.push_back(std::cos(a));
    row.push_back(std::sin(a));
  }
  if (spec.include_diurnal) {
    const double a = 2.0 * std::numbers::pi * t_days;
    row.push_back(std::cos(a));
    row.push_back(std::sin(a));
  }
  return row;
}

HarmonicModel::HarmonicModel(GridGeom geom, HarmonicSpec spec, std::vector<double> coeffs,
                             std::vector<std::uint8_t> fit_valid)
    : geom_(geom), spec_(spec), coeffs_(std::move(coeffs)), fit_valid_(std::move(fit_valid)) {
  geom_.validate();
  if (coeffs_.size() != geom_.size() * spec_.n_coeffs() || fit_valid_.size() != geom_.size())
    throw DimensionError("harmonic model arrays do not match the geometry");
}

double HarmonicModel::evaluate(std::size_t idx, double t_days) const {
  const auto basis = harmonic_basis(spec_, t_days);
  const auto beta = coeffs(idx);
  double acc = 0.0;
  for (std::size_t k = 0; k < basis.size(); ++k) acc += beta[k] * basis[k];
  return acc;
}

HarmonicModel fit_harmonic(const RasterStack& stack, const HarmonicSpec& spec, unsigned threads) {
  const GridGeom& g = stack.geom();
  const std::size_t p = spec.n_coeffs();
  const std::size_t n_t = stack.size();

  Eigen::MatrixXd design(static_cast<Eigen::Index>(n_t), static_cast<Eigen::Index>(p));
  for (std::size_t t = 0; t < n_t; ++t) {
    const auto row = harmonic_basis(spec, *stack[t].timestamp_days());
    for (std::size_t k = 0; k < p; ++k) design(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = row[k];
  }

  std::vector<double> coeffs(g.size() * p, kNaN);
  std::vector<std::uint8_t> ok(g.size(), 0);
  constexpr std::size_t kChunk = 256;
  const std::size_t n_chunks = (g.size() + kChunk - 1) / kChunk;

  parallel_for(n_chunks, threads, [&](std::size_t chunk) {
    Eigen::MatrixXd normal(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(p));
    const std::size_t end = std::min(g.size(), (chunk + 1) * kChunk);
    for (std::size_t idx = chunk * kChunk; idx < end; ++idx) {
      normal.setZero();
      rhs.setZero();
      std::size_t n_obs = 0;
      for (std::size_t t = 0; t < n_t; ++t) {
        if (!stack[t].is_valid(idx)) continue;
        const auto x = design.row(static_cast<Eigen::Index>(t)).transpose();
        normal.noalias() += x * x.transpose();
        rhs.noalias() += x * stack[t][idx];
        ++n_obs;
      }
      if (n_obs < p) continue;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
      const double lo = eig.eigenvalues().minCoeff();
      const double hi = eig.eigenvalues().maxCoeff();
      if (!(lo > kMinReciprocalCondition * hi)) continue;
      const Eigen::VectorXd beta = normal.llt().solve(rhs);
      for (std::size_t k = 0; k < p; ++k) coeffs[idx * p + k] = beta(static_cast<Eigen::Index>(k));
      ok[idx] = 1;
    }
  });
  return HarmonicModel(g, spec, std::move(coeffs), std::move(ok));
}

Raster predict_mean(const HarmonicModel& m, double t_days) {
  const std::size_t n = m.geom().size();
  const auto basis = harmonic_basis(m.spec(), t_days);
  std::vector<double> out(n, kNaN);
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (!m.fit_valid(idx)) continue;
    const auto beta = m.coeffs(idx);
    double acc = 0.0;
    for (std::size_t k = 0; k < basis.size(); ++k) acc += beta[k] * basis[k];
    out[idx] = acc;
  }
  return Raster(m.geom(), std::move(out), {m.fit_valid_mask().begin(), m.fit_valid_mask().end()}, t_days);
}

RasterStack residuals(const RasterStack& stack, const HarmonicModel& m) {
  if (!compatible(stack.geom(), m.geom())) throw ArgumentError("stack and harmonic model geometries differ");
  std::vector<Raster> layers;
  layers.reserve(stack.size());
  for (const auto& layer : stack.layers()) {
    const Raster mean = predict_mean(m, *layer.timestamp_days());
    const std::size_t n = layer.geom().size();
    std::vector<double> v(n, kNaN);
    std::vector<std::uint8_t> ok(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (layer.is_valid(i) && mean.is_valid(i)) {
        v[i] = layer[i] - mean[i];
        ok[i] = 1;
      }
    }
    layers.emplace_back(layer.geom(), std::move(v), std::move(ok), layer.timestamp_days());
  }
  return RasterStack(stack.geom(), std::move(layers));
}

std::vector<std::pair<double, double>> cycle_curve(const HarmonicModel& m, std::size_t row, std::size_t col,
                                                   std::span<const double> t_grid) {
  if (row >= m.geom().n_rows || col >= m.geom().n_cols) throw ArgumentError("pixel outside the grid");
  const std::size_t idx = m.geom().index(row, col);
  if (!m.fit_valid(idx)) throw ArgumentError("pixel has no valid harmonic fit");
  std::vector<std::pair<double, double>> out;
  out.reserve(t_grid.size());
  for (double t : t_grid) out.emplace_back(t, m.evaluate(idx, t));
  return out;
}

void write_harmonic(const HarmonicModel& m, const std::filesystem::path& path) {
  const std::size_t p = m.spec().n_coeffs();
  const std::size_t n = m.geom().size();
  LayeredRaster lr{m.geom(), kHarmonicRole, {}, nlohmann::ordered_json::object()};
  lr.attrs["include_annual"] = m.spec().include_annual;
  lr.attrs["include_diurnal"] = m.spec().include_diurnal;
  for (std::size_t k = 0; k < p; ++k) {
    std::vector<double> v(n, kNaN);
    for (std::size_t i = 0; i < n; ++i) {
      if (m.fit_valid(i)) v[i] = m.coeffs(i)[k];
    }
    lr.layers.push_back(Raster::from_values(m.geom(), std::move(v)));
  }
  std::vector<double> flag(n);
  for (std::size_t i = 0; i < n; ++i) flag[i] = m.fit_valid(i) ? 1.0 : 0.0;
  lr.layers.push_back(Raster::from_values(m.geom(), std::move(flag)));
  write_layered(lr, path);
}

HarmonicModel read_harmonic(const std::filesystem::path& path) {
  LayeredRaster lr = read_layered(path);
  if (lr.role != kHarmonicRole) throw FormatError(path.string() + " does not hold harmonic coefficients");
  HarmonicSpec spec;
  try {
    spec.include_annual = lr.attrs.at("include_annual").get<bool>();
    spec.include_diurnal = lr.attrs.at("include_diurnal").get<bool>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(path.string() + ": harmonic header lacks frequency flags");
  }
  const std::size_t p = spec.n_coeffs();
  if (lr.layers.size() != p + 1) throw FormatError(path.string() + ": wrong number of coefficient layers");
  const std::size_t n = lr.geom.size();
  std::vector<double> coeffs(n * p, kNaN);
  std::vector<std::uint8_t> ok(n, 0);
  const Raster& flag = lr.layers.back();
  for (std::size_t i = 0; i < n; ++i) {
    if (!flag.is_valid(i) || flag[i] == 0.0) continue;
    for (std::size_t k = 0; k < p; ++k) {
      if (!lr.layers[k].is_valid(i)) throw FormatError(path.string() + ": missing coefficient at a fitted pixel");
      coeffs[i * p + k] = lr.layers[k][i];
    }
    ok[i] = 1;
  }
  return HarmonicModel(lr.geom, spec, std::move(coeffs), std::move(ok));
}

}  // namespace bdgp
