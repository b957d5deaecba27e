#pragma once

#include <Eigen/Dense>

namespace dmgp {

// Squared-exponential kernel with per-dimension lengthscales,
//   k(x, x') = sf2 * exp(-0.5 * sum_d ((x_d - x'_d) / ell_d)^2).
// Hyperparameters are kept in log space so unconstrained optimizers can
// move them freely; ell_d = exp(log_ell[d]), sf2 = exp(2 * log_sf).
struct SeArdKernel {
  Eigen::VectorXd log_ell;  // one entry per input dimension
  double log_sf = 0.0;

  SeArdKernel() = default;
  explicit SeArdKernel(Eigen::Index dim)
      : log_ell(Eigen::VectorXd::Zero(dim)) {}

  Eigen::Index dim() const { return log_ell.size(); }
  double sf2() const { return std::exp(2.0 * log_sf); }

  // Cross-covariance between row sets: result(i, j) = k(X.row(i), Z.row(j)).
  Eigen::MatrixXd cross(const Eigen::MatrixXd& X,
                        const Eigen::MatrixXd& Z) const;

  // Prior variances k(x, x) for each row of X (constant sf2 for this kernel).
  Eigen::VectorXd diag(const Eigen::MatrixXd& X) const;

  // Flat view [log_ell; log_sf] for generic parameter plumbing.
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);
};

// Shared implementation detail, also used by the autodiff kernel op:
// squared scaled distances D2(i, j) = |(x_i - z_j) ./ ell|^2.
Eigen::MatrixXd scaled_sq_dist(const Eigen::MatrixXd& X,
                               const Eigen::MatrixXd& Z,
                               const Eigen::VectorXd& ell);

}  // namespace dmgp
