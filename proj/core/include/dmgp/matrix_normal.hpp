#pragma once

#include <Eigen/Dense>

namespace dmgp {

// Matrix-normal distribution MN(M, K, Sigma) over n x p matrices: K is the
// n x n row covariance, Sigma the p x p column covariance, and vec(X) is
// multivariate normal with mean vec(M) and covariance Sigma (x) K.
struct MatrixNormal {
  Eigen::MatrixXd mean;     // n x p
  Eigen::MatrixXd row_cov;  // n x n
  Eigen::MatrixXd col_cov;  // p x p
};

double mn_log_density(const Eigen::MatrixXd& x, const MatrixNormal& dist);

// Reparameterized draw: M + L_K * noise * L_Sigma^T, a deterministic
// function of (dist, noise); noise must be i.i.d. standard normal n x p.
Eigen::MatrixXd mn_sample(const MatrixNormal& dist,
                          const Eigen::MatrixXd& noise);

// KL(q || p) for matrix normals sharing one column covariance Sigma:
// q = MN(A, S, Sigma), p = MN(Mz, Kzz, Sigma).  Closed form
//   1/2 [ D tr(Kzz^-1 S) - M D + D (log|Kzz| - log|S|)
//         + tr(Sigma^-1 (A-Mz)^T Kzz^-1 (A-Mz)) ]
// with M rows and D columns; verified against the dense Gaussian KL of the
// vectorized distributions in the test suite.
double mn_kl_shared_colcov(const MatrixNormal& q, const MatrixNormal& p);

}  // namespace dmgp
