#include "dmgp/kernel.hpp"

#include "dmgp/errors.hpp"

namespace dmgp {

Eigen::MatrixXd scaled_sq_dist(const Eigen::MatrixXd& X,
                               const Eigen::MatrixXd& Z,
                               const Eigen::VectorXd& ell) {
  require(X.cols() == Z.cols(), "kernel inputs must share dimensionality");
  require(ell.size() == X.cols(), "lengthscale count must match input dim");
  const Eigen::VectorXd inv_ell = ell.cwiseInverse();
  const Eigen::MatrixXd Xs = X * inv_ell.asDiagonal();
  const Eigen::MatrixXd Zs = Z * inv_ell.asDiagonal();
  const Eigen::VectorXd xn = Xs.rowwise().squaredNorm();
  const Eigen::VectorXd zn = Zs.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * Xs * Zs.transpose();
  d2.colwise() += xn;
  d2.rowwise() += zn.transpose();
  // Guard the tiny negatives cancellation can produce on coincident points.
  return d2.cwiseMax(0.0);
}

Eigen::MatrixXd SeArdKernel::cross(const Eigen::MatrixXd& X,
                                   const Eigen::MatrixXd& Z) const {
  const Eigen::VectorXd ell = log_ell.array().exp();
  return sf2() * (-0.5 * scaled_sq_dist(X, Z, ell)).array().exp();
}

Eigen::VectorXd SeArdKernel::diag(const Eigen::MatrixXd& X) const {
  return Eigen::VectorXd::Constant(X.rows(), sf2());
}

Eigen::VectorXd SeArdKernel::params() const {
  Eigen::VectorXd p(log_ell.size() + 1);
  p.head(log_ell.size()) = log_ell;
  p[log_ell.size()] = log_sf;
  return p;
}

void SeArdKernel::set_params(const Eigen::VectorXd& p) {
  require(p.size() >= 2, "kernel parameter vector too short");
  log_ell = p.head(p.size() - 1);
  log_sf = p[p.size() - 1];
}

}  // namespace dmgp
