#pragma once

// Quasi-Newton (BFGS) minimisation with a strong-Wolfe line search, plus
// finite-difference Hessians of analytic gradients.

#include <Eigen/Dense>
#include <functional>
#include <string>

namespace visitsim {

/// Objective returning f(x); writes the gradient when `grad` is non-null.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct OptimOptions {
  double grad_tol = 1e-6;   // max-norm of the gradient
  double param_tol = 1e-8;  // max-norm of the step, relative to 1 + |x|
  int max_iter = 500;
  /// A stalled search still counts as converged when the gradient is below this.
  double stall_grad_tol = 1e-3;
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  /// Final BFGS inverse-Hessian approximation, reusable as a warm start.
  Eigen::MatrixXd inverse_hessian;
};

OptimResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0,
                          const OptimOptions& opts = {},
                          const Eigen::MatrixXd* initial_inverse_hessian = nullptr);

/// Symmetrised central-difference Jacobian of the gradient of `f` at x.
Eigen::MatrixXd hessian_from_gradient(const Objective& f, const Eigen::VectorXd& x,
                                      double rel_step = 1e-5);

/// Inverse of a symmetric positive-definite matrix; false if not PD.
bool invert_spd(const Eigen::MatrixXd& a, Eigen::MatrixXd& inv);

}  // namespace visitsim
