#include "cavsim/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cavsim/types.hpp"

namespace cavsim {

namespace {

double weighted_chi2(const Eigen::VectorXd& y, const Eigen::VectorXd& model,
                     const Eigen::VectorXd& inv_sigma) {
  double acc = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double r = (y[i] - model[i]) * inv_sigma[i];
    acc += r * r;
  }
  return acc;
}

}  // namespace

FitResult levenberg_marquardt(const ResidualModel& model_fn, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& sigma, Eigen::VectorXd p,
                              const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                              const FitOptions& opts) {
  const Eigen::Index n = y.size();
  const Eigen::Index np = p.size();
  if (np == 0) throw ConfigError("fit requires at least one parameter");
  if (n <= np) throw ConfigError("fit requires more data points than parameters");
  if (lower.size() != np || upper.size() != np) {
    throw ConfigError("fit bounds must match the parameter count");
  }
  for (Eigen::Index j = 0; j < np; ++j) {
    if (!(lower[j] <= upper[j])) throw ConfigError("fit lower bound exceeds upper bound");
    p[j] = std::clamp(p[j], lower[j], upper[j]);
  }

  const bool weighted = sigma.size() > 0;
  Eigen::VectorXd inv_sigma(n);
  if (weighted) {
    if (sigma.size() != n) throw ConfigError("sigma vector length mismatch");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(sigma[i] > 0)) throw ConfigError("sigma values must be positive");
      inv_sigma[i] = 1.0 / sigma[i];
    }
  } else {
    inv_sigma.setOnes();
  }

  FitResult out;
  out.dof = static_cast<int>(n - np);

  Eigen::VectorXd model(n);
  Eigen::MatrixXd jac(n, np);
  model_fn(p, model, &jac);
  double chi2 = weighted_chi2(y, model, inv_sigma);

  double lambda = opts.initial_lambda;
  bool converged = false;
  std::string message = "max iterations reached";
  int iter = 0;

  Eigen::MatrixXd jtj(np, np);
  Eigen::VectorXd jtr(np);
  Eigen::VectorXd model_trial(n);

  for (; iter < opts.max_iterations; ++iter) {
    // Weighted normal equations.
    jtj.setZero();
    jtr.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = inv_sigma[i] * inv_sigma[i];
      const double r = y[i] - model[i];
      for (Eigen::Index a = 0; a < np; ++a) {
        jtr[a] += w * jac(i, a) * r;
        for (Eigen::Index b = a; b < np; ++b) {
          jtj(a, b) += w * jac(i, a) * jac(i, b);
        }
      }
    }
    for (Eigen::Index a = 0; a < np; ++a)
      for (Eigen::Index b = 0; b < a; ++b) jtj(a, b) = jtj(b, a);

    bool stepped = false;
    for (int attempt = 0; attempt < 40 && !stepped; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      for (Eigen::Index a = 0; a < np; ++a) {
        const double d = jtj(a, a) > 0 ? jtj(a, a) : 1.0;
        damped(a, a) += lambda * d;
      }
      Eigen::LDLT<Eigen::MatrixXd> solver(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 4.0;
        continue;
      }
      Eigen::VectorXd step = solver.solve(jtr);
      Eigen::VectorXd p_trial = p + step;
      for (Eigen::Index j = 0; j < np; ++j) {
        p_trial[j] = std::clamp(p_trial[j], lower[j], upper[j]);
      }
      model_fn(p_trial, model_trial, nullptr);
      const double chi2_trial = weighted_chi2(y, model_trial, inv_sigma);
      if (chi2_trial <= chi2) {
        // Accepted: measure the actual (clamped) step for convergence.
        double max_rel = 0;
        for (Eigen::Index j = 0; j < np; ++j) {
          const double scale = std::abs(p[j]) + std::abs(p_trial[j]) + 1e-300;
          max_rel = std::max(max_rel, std::abs(p_trial[j] - p[j]) / scale);
        }
        const double improvement = chi2 - chi2_trial;
        p = p_trial;
        chi2 = chi2_trial;
        lambda = std::max(lambda / 3.0, 1e-14);
        model_fn(p, model, &jac);
        stepped = true;
        if (max_rel < opts.xtol || improvement <= opts.ftol * (chi2 + 1e-300)) {
          converged = true;
          message = "converged";
        }
      } else {
        lambda *= 4.0;
      }
    }
    if (!stepped) {
      converged = true;  // no downhill step exists at any damping: a (local) minimum
      message = "converged (no further improvement)";
      break;
    }
    if (converged) break;
  }

  out.params = p;
  out.chi2 = chi2;
  out.iterations = iter + 1;
  out.converged = converged;
  out.message = message;

  // Covariance from the Gauss-Newton Hessian at the solution.
  jtj.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = inv_sigma[i] * inv_sigma[i];
    for (Eigen::Index a = 0; a < np; ++a)
      for (Eigen::Index b = a; b < np; ++b) jtj(a, b) += w * jac(i, a) * jac(i, b);
  }
  for (Eigen::Index a = 0; a < np; ++a)
    for (Eigen::Index b = 0; b < a; ++b) jtj(a, b) = jtj(b, a);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
  if (lu.isInvertible()) {
    out.covariance = lu.inverse();
    if (!weighted && out.dof > 0) out.covariance *= chi2 / out.dof;
  } else {
    out.covariance = Eigen::MatrixXd::Constant(np, np,
                                               std::numeric_limits<double>::quiet_NaN());
  }
  out.uncertainties.resize(np);
  for (Eigen::Index j = 0; j < np; ++j) {
    const double v = out.covariance(j, j);
    out.uncertainties[j] = v >= 0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
  }
  out.at_bound.assign(static_cast<std::size_t>(np), false);
  for (Eigen::Index j = 0; j < np; ++j) {
    const double span = std::isfinite(upper[j] - lower[j]) ? upper[j] - lower[j] : 1.0;
    const double tol = 1e-10 * (std::abs(span) + std::abs(p[j]) + 1e-300);
    if (std::isfinite(lower[j]) && p[j] - lower[j] <= tol) out.at_bound[j] = true;
    if (std::isfinite(upper[j]) && upper[j] - p[j] <= tol) out.at_bound[j] = true;
  }
  return out;
}

}  // namespace cavsim
