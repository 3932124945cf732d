#include "bdgp/optimize.hpp"

#include <algorithm>
#include <cmath>

#include "bdgp/error.hpp"

namespace bdgp {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 40;
constexpr double kMinStep = 1e-13;
constexpr double kValueNoise = 1e-8;
constexpr int kMaxExpansions = 30;
constexpr double kCurvature = 0.9;

Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const bool pinned = lo(i) == hi(i);
    const bool at_lo = x(i) <= lo(i) && g(i) > 0.0;
    const bool at_hi = x(i) >= hi(i) && g(i) < 0.0;
    if (pinned || at_lo || at_hi) pg(i) = 0.0;
  }
  return pg;
}

}  // namespace

BoxMinimizeResult minimize_box_bfgs(const std::function<ValueGrad(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                                    const Eigen::VectorXd& upper, int max_iter, double grad_tol) {
  const Eigen::Index n = x0.size();
  if (lower.size() != n || upper.size() != n) throw ArgumentError("bound vectors differ in size from x0");
  if ((lower.array() > upper.array()).any()) throw ArgumentError("lower bound exceeds upper bound");
  auto clip = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.cwiseMax(lower).cwiseMin(upper); };

  BoxMinimizeResult res;
  res.x = clip(x0);
  ValueGrad cur = f(res.x);
  if (!std::isfinite(cur.value)) throw NumericError("objective is undefined at the starting point");

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd h = eye / std::max(1.0, cur.grad.norm());
  bool fresh = true;

  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd pg = projected_gradient(res.x, cur.grad, lower, upper);
    if (pg.norm() <= grad_tol) break;

    Eigen::VectorXd free_mask = (pg.array() != 0.0).cast<double>().matrix();
    Eigen::VectorXd d = -(free_mask.asDiagonal() * h * free_mask.asDiagonal() * cur.grad);
    if (!(cur.grad.dot(d) < 0.0)) {
      h = eye / std::max(1.0, pg.norm());
      fresh = true;
      d = -(h * pg);
    }

    const double noise = kValueNoise * std::max(1.0, std::abs(cur.value));
    auto armijo = [&](const ValueGrad& v, const Eigen::VectorXd& x) {
      return std::isfinite(v.value) && v.value <= cur.value + kArmijo * cur.grad.dot(x - res.x);
    };

    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    ValueGrad next;
    for (int k = 0; k < kMaxHalvings; ++k, alpha *= 0.5) {
      x_new = clip(res.x + alpha * d);
      const Eigen::VectorXd s = x_new - res.x;
      if (s.norm() <= kMinStep * (1.0 + res.x.norm())) break;
      next = f(x_new);
      if (armijo(next, x_new)) {
        accepted = true;
        break;
      }
      // Close to the optimum the predicted decrease drops below the rounding
      // noise of the objective; a level step that shrinks the projected
      // gradient is still progress.
      const bool below_noise = std::abs(cur.grad.dot(s)) <= noise;
      const bool level = std::isfinite(next.value) && std::abs(next.value - cur.value) <= noise;
      if (below_noise && level && projected_gradient(x_new, next.grad, lower, upper).norm() < pg.norm()) {
        accepted = true;
        break;
      }
    }
    // A full step that is accepted while the slope along d is still steep
    // means the inverse-Hessian estimate is too small; stretch the step so
    // the curvature pair that updates it is informative.
    if (accepted && alpha == 1.0) {
      const double slope0 = cur.grad.dot(d);
      for (int k = 0; k < kMaxExpansions && next.grad.dot(d) < kCurvature * slope0; ++k) {
        const Eigen::VectorXd x_try = clip(res.x + 2.0 * alpha * d);
        if (x_try == x_new) break;
        ValueGrad v = f(x_try);
        if (!armijo(v, x_try) || !(v.value < next.value)) break;
        alpha *= 2.0;
        x_new = x_try;
        next = std::move(v);
      }
    }
    if (!accepted) {
      if (fresh) break;
      h = eye / std::max(1.0, pg.norm());
      fresh = true;
      continue;
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = next.grad - cur.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) h = eye * (sy / y.squaredNorm());
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd left = eye - rho * s * y.transpose();
      h = left * h * left.transpose() + rho * s * s.transpose();
      fresh = false;
    }
    res.x = x_new;
    cur = std::move(next);
  }

  res.value = cur.value;
  res.grad = cur.grad;
  res.projected_grad_norm = projected_gradient(res.x, cur.grad, lower, upper).norm();
  res.iterations = it;
  res.converged = res.projected_grad_norm <= grad_tol;
  return res;
}

}  // namespace bdgp
