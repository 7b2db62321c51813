#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "levctl/errors.hpp"

namespace levctl::fit {

struct LMOptions {
  int max_iterations = 300;
  double ftol = 1e-14;       // relative chi2 improvement
  double ptol = 1e-13;       // relative step size
  double lambda_init = 1e-3;
};

struct LMResult {
  Eigen::VectorXd params;
  double chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd covariance;  // (J^T J)^-1 * chi2/(n-k) at the optimum
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

namespace detail {

inline Eigen::MatrixXd numeric_jacobian(const ResidualFn& residuals,
                                        const Eigen::VectorXd& p,
                                        const Eigen::VectorXd& r0) {
  const int n = static_cast<int>(r0.size());
  const int k = static_cast<int>(p.size());
  Eigen::MatrixXd jac(n, k);
  for (int j = 0; j < k; ++j) {
    const double h = 1e-7 * std::max(1.0, std::abs(p[j]));
    Eigen::VectorXd pp = p, pm = p;
    pp[j] += h;
    pm[j] -= h;
    jac.col(j) = (residuals(pp) - residuals(pm)) / (2.0 * h);
  }
  return jac;
}

}  // namespace detail

/// Damped least squares for small dense problems (a handful of
/// parameters, fixed models). Numeric central-difference Jacobian.
inline LMResult levenberg_marquardt(const ResidualFn& residuals, Eigen::VectorXd p0,
                                    const LMOptions& opt = {}) {
  LMResult res;
  Eigen::VectorXd p = std::move(p0);
  Eigen::VectorXd r = residuals(p);
  double chi2 = r.squaredNorm();
  double lambda = opt.lambda_init;

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter + 1;
    const Eigen::MatrixXd jac = detail::numeric_jacobian(residuals, p, r);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;

    bool improved = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      for (int d = 0; d < damped.rows(); ++d)
        damped(d, d) += lambda * std::max(jtj(d, d), 1e-30);
      const Eigen::VectorXd step = damped.ldlt().solve(-jtr);
      const Eigen::VectorXd p_try = p + step;
      const Eigen::VectorXd r_try = residuals(p_try);
      const double chi2_try = r_try.squaredNorm();
      if (std::isfinite(chi2_try) && chi2_try <= chi2) {
        const double dchi = chi2 - chi2_try;
        const double dstep = step.norm();
        p = p_try;
        r = r_try;
        chi2 = chi2_try;
        lambda = std::max(lambda / 3.0, 1e-12);
        improved = true;
        if (dchi <= opt.ftol * std::max(chi2, 1e-300) ||
            dstep <= opt.ptol * (p.norm() + opt.ptol)) {
          res.converged = true;
        }
        break;
      }
      lambda *= 8.0;
    }
    if (!improved) {
      // no downhill direction left at any damping: treat as converged
      res.converged = true;
    }
    if (res.converged) break;
  }

  res.params = p;
  res.chi2 = chi2;
  const Eigen::VectorXd r_fin = residuals(p);
  const Eigen::MatrixXd jac = detail::numeric_jacobian(residuals, p, r_fin);
  const int dof = std::max<int>(1, static_cast<int>(r_fin.size()) - static_cast<int>(p.size()));
  Eigen::MatrixXd jtj = jac.transpose() * jac;
  res.covariance = jtj.completeOrthogonalDecomposition().pseudoInverse() * (chi2 / dof);
  return res;
}

/// Ordinary least squares y ~ X b.
inline Eigen::VectorXd linear_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  return x.colPivHouseholderQr().solve(y);
}

}  // namespace levctl::fit
