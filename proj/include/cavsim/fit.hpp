#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cavsim {

struct FitResult {
  Eigen::VectorXd params;
  Eigen::VectorXd uncertainties;  // 1-sigma, from the scaled covariance
  Eigen::MatrixXd covariance;
  double chi2 = 0;
  int dof = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<bool> at_bound;
  std::string message;
};

// Fills `model` (size n) at the given parameters and, when `jacobian` is
// non-null, the n x p matrix of partial derivatives.
using ResidualModel = std::function<void(const Eigen::VectorXd& params,
                                         Eigen::VectorXd& model,
                                         Eigen::MatrixXd* jacobian)>;

struct FitOptions {
  int max_iterations = 600;
  double xtol = 1e-10;          // relative parameter-step tolerance
  double ftol = 1e-10;          // relative chi2 improvement tolerance
  double initial_lambda = 1e-3;
};

// Levenberg-Marquardt least squares with box constraints (use +/-infinity
// for unconstrained parameters). `sigma` may be empty for an unweighted fit,
// in which case the covariance is scaled by chi2/dof.
FitResult levenberg_marquardt(const ResidualModel& model, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& sigma, Eigen::VectorXd p0,
                              const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                              const FitOptions& opts = {});

}  // namespace cavsim
