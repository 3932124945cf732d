#pragma once

#include <Eigen/Dense>

#include <functional>

namespace bdgp {

/// Objective value and gradient. A non-finite value marks an infeasible point
/// (the line search backs off from it).
struct ValueGrad {
  double value;
  Eigen::VectorXd grad;
};

struct BoxMinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd grad;
  double projected_grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Projected BFGS with Armijo backtracking on the box [lower, upper].
/// Converges when the 2-norm of the projected gradient drops to `grad_tol`.
/// Coordinates with lower == upper stay fixed.
BoxMinimizeResult minimize_box_bfgs(const std::function<ValueGrad(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                                    const Eigen::VectorXd& upper, int max_iter, double grad_tol);

}  // namespace bdgp
