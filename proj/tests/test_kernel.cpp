#include <doctest.h>

#include <cmath>
#include <random>

#include "bdgp/error.hpp"
#include "bdgp/kernel.hpp"
#include "oracles.hpp"

using namespace bdgp;

namespace {

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

// Lag at which a kernel drops to exp(-1/2) of its zero-lag value, by bisection.
template <class K>
double half_e_lag(K k) {
  const double target = k(0.0) * std::exp(-0.5);
  double lo = 0.0, hi = 100.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (k(mid) > target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("squared exponential") {
  CHECK(k_se(0.0, 2.5, 1.7) == 6.25);
  CHECK(k_se(std::sqrt(2.0), 1.0, 1.0) == doctest::Approx(0.367879).epsilon(1e-6));
  double prev = k_se(0.0, 1.0, 2.0);
  for (double d = 0.5; d < 40.0; d += 0.5) {
    const double v = k_se(d, 1.0, 2.0);
    CHECK(v <= prev);
    prev = v;
  }
  CHECK(k_se(1e3, 1.0, 1.0) == 0.0);
  CHECK_THROWS_AS(k_se(1.0, 0.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(k_se(1.0, 1.0, -1.0), ArgumentError);
}

TEST_CASE("block-diagonal kernel") {
  GridGeom g{3, 3, 1.0, {0, 0}};
  const Partition p(g, {1, 1, 0, 1, 1, 0, 2, 2, 2});
  RegionParams theta{{0.5, 2.0, 3.0}, {1.0, 1.5, 4.0}};
  CHECK(k_bdgp(4, 4, p, theta) == 4.0);
  CHECK(k_bdgp(0, 1, p, theta) == doctest::Approx(4.0 * std::exp(-1.0 / (2.0 * 1.5 * 1.5))));
  CHECK(k_bdgp(3, 6, p, theta) == 0.0);
  CHECK(k_bdgp(1, 2, p, theta) == 0.0);
  for (std::size_t a = 0; a < g.size(); ++a)
    for (std::size_t b = 0; b < g.size(); ++b) CHECK(k_bdgp(a, b, p, theta) == k_bdgp(b, a, p, theta));
}

TEST_CASE("blurred kernel examples") {
  for (double d : {0.0, 0.7, 3.0}) {
    CHECK(k_blurred(d, 1.3, 2.0, 0.0) == k_se(d, 1.3, 2.0));
    CHECK(k_double_blurred(d, 1.3, 2.0, 0.0) == k_se(d, 1.3, 2.0));
  }
  CHECK(k_blurred(0.0, 1.0, 1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(k_blurred(2.0, 1.0, 1.0, 1.0) == doctest::Approx(0.183940).epsilon(1e-6));
  CHECK(k_double_blurred(0.0, 1.0, 1.0, 1.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(oracle::blurred_cov(0.0, 1.0, 1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(oracle::blurred_cov(2.0, 1.0, 1.0, 1.0) == doctest::Approx(0.183940).epsilon(1e-6));
  CHECK(oracle::double_blurred_cov(0.0, 1.0, 1.0, 1.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-8));
  for (double b : {0.3, 0.97, 2.0, 5.0})
    for (double ell : {0.5, 1.0, 3.0}) {
      CHECK(k_double_blurred(0.0, 1.0, ell, b) <= k_blurred(0.0, 1.0, ell, b));
      CHECK(k_blurred(0.0, 1.0, ell, b) <= k_se(0.0, 1.0, ell));
    }
  CHECK_THROWS_AS(k_blurred(0.0, 1.0, 0.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(k_double_blurred(0.0, -1.0, 1.0, 1.0), ArgumentError);
}

TEST_CASE("closed forms agree with quadrature") {
  for (double ell : {0.5, 1.0, 2.0})
    for (double b : {0.0, 0.97, 2.0})
      for (double d : {0.0, 1.0, 3.0}) {
        CAPTURE(ell);
        CAPTURE(b);
        CAPTURE(d);
        CHECK(rel_err(k_blurred(d, 1.0, ell, b), oracle::blurred_cov(d, 1.0, ell, b)) <= 1e-6);
        CHECK(rel_err(k_double_blurred(d, 1.0, ell, b), oracle::double_blurred_cov(d, 1.0, ell, b)) <= 1e-6);
      }
}

TEST_CASE("effective length scale grows with the blur") {
  const double ell = 1.5;
  double prev = 0.0;
  for (double b : {0.0, 0.5, 0.97, 1.5, 3.0}) {
    const double lag = half_e_lag([&](double d) { return k_blurred(d, 1.0, ell, b); });
    CHECK(lag == doctest::Approx(std::sqrt(ell * ell + b * b)).epsilon(1e-9));
    CHECK(lag > prev);
    prev = lag;
  }
}

TEST_CASE("covariance assembly") {
  GridGeom g{4, 4, 1.0, {0, 0}};
  std::vector<RegionId> labels(g.size(), 1);
  labels[3] = 0;
  RegionParams theta{{0.5, 2.0}, {1.0, 1.0}};

  SUBCASE("one pixel") {
    const std::vector<std::size_t> px{5};
    const auto k = assemble_cov(px, g, labels, theta, CovMode::Latent, 0.0, 0.0);
    CHECK(k.dim() == 1);
    CHECK(k.matrix()(0, 0) == 4.0);
  }
  SUBCASE("different regions") {
    const std::vector<std::size_t> px{2, 3};
    for (auto mode : {CovMode::Latent, CovMode::DoubleBlurred}) {
      const auto k = assemble_cov(px, g, labels, theta, mode, 0.97, 1e-8);
      CHECK(k.matrix()(0, 1) == 0.0);
      CHECK(k.matrix()(1, 0) == 0.0);
    }
  }
  SUBCASE("adjacent same-region pixels") {
    RegionParams unit{{1.0, 1.0}, {1.0, 1.0}};
    const std::vector<std::size_t> px{0, 1};
    const auto k = assemble_cov(px, g, labels, unit, CovMode::Latent, 0.0, 1e-8);
    CHECK(k.matrix()(0, 1) == doctest::Approx(0.606531).epsilon(1e-6));
    CHECK(k.matrix()(0, 0) == 1.0 + 1e-8);
    CHECK(k.nugget() == 1e-8);
  }
  SUBCASE("double-blurred entries") {
    const std::vector<std::size_t> px{0, 5};
    const auto k = assemble_cov(px, g, labels, theta, CovMode::DoubleBlurred, 0.97, 0.0);
    CHECK(k.matrix()(0, 1) == doctest::Approx(k_double_blurred(std::sqrt(2.0), 2.0, 1.0, 0.97)));
    CHECK(k.matrix()(1, 1) == doctest::Approx(k_double_blurred(0.0, 2.0, 1.0, 0.97)));
  }
  SUBCASE("whole grid is factorisable with the default nugget") {
    std::vector<std::size_t> px(g.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = i;
    for (double ell : {0.3, 1.0, 5.0, 30.0}) {
      RegionParams t{{1.0, 1.0}, {ell, ell}};
      const auto k = assemble_cov(px, g, labels, t, CovMode::Latent, 0.0, 1e-8);
      CHECK(k.matrix().isApprox(k.matrix().transpose(), 1e-12));
      CHECK(std::isfinite(k.log_det()));
    }
  }
  SUBCASE("indefinite input fails") {
    Eigen::MatrixXd m(2, 2);
    m << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(CovMatrix({0, 1}, m, 0.0), NumericError);
  }
}

TEST_CASE("Cholesky solves") {
  const CovMatrix eye({0, 1, 2}, Eigen::MatrixXd::Identity(3, 3), 0.0);
  const Eigen::Vector3d b(1.5, -2.0, 0.25);
  CHECK((chol_solve(eye, Eigen::VectorXd(b)) - b).norm() == 0.0);

  Eigen::MatrixXd four(1, 1);
  four << 4.0;
  const CovMatrix k4({0}, four, 0.0);
  CHECK(chol_solve(k4, Eigen::VectorXd(Eigen::VectorXd::Constant(1, 2.0)))(0) == doctest::Approx(0.5));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd a(5, 5);
    for (Eigen::Index i = 0; i < 25; ++i) a(i) = n01(rng);
    const Eigen::MatrixXd spd = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(5, 5);
    Eigen::MatrixXd rhs(5, 3);
    for (Eigen::Index i = 0; i < 15; ++i) rhs(i) = n01(rng);
    const CovMatrix k({0, 1, 2, 3, 4}, spd, 0.0);
    const Eigen::MatrixXd want = spd.inverse() * rhs;
    const Eigen::MatrixXd got = chol_solve(k, rhs);
    CHECK((got - want).norm() / want.norm() <= 1e-10);
    CHECK((spd * got - rhs).norm() / rhs.norm() <= 1e-8);
    CHECK(k.log_det() == doctest::Approx(std::log(spd.determinant())).epsilon(1e-10));
  }
}
