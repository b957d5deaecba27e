#pragma once

#include <Eigen/Dense>
#include <vector>

namespace dmgp {

struct CholeskyFactor {
  Eigen::MatrixXd lower;  // L with L * L^T = A + jitter_used * I
  double jitter_used = 0.0;

  double log_det() const {  // log |A + jitter_used * I|
    return 2.0 * lower.diagonal().array().log().sum();
  }
};

inline std::vector<double> default_jitter_schedule() {
  return {0.0, 1e-10, 1e-8, 1e-6};
}

// Factor a symmetric matrix, escalating through the jitter schedule until
// the factorization succeeds.  Symmetry is checked to 1e-10; exhausting the
// schedule raises NotPositiveDefinite with the smallest-eigenvalue estimate.
CholeskyFactor cholesky(const Eigen::MatrixXd& Amat,
                        const std::vector<double>& jitter_schedule =
                            default_jitter_schedule());

// Triangular solves; covariance math goes through these rather than
// explicit inverses.
inline Eigen::MatrixXd solve_lower(const Eigen::MatrixXd& L,
                                   const Eigen::MatrixXd& B) {
  return L.triangularView<Eigen::Lower>().solve(B);
}

inline Eigen::MatrixXd solve_lower_t(const Eigen::MatrixXd& L,
                                     const Eigen::MatrixXd& B) {
  return L.transpose().triangularView<Eigen::Upper>().solve(B);
}

// (L L^T)^{-1} B via two triangular solves.
inline Eigen::MatrixXd chol_solve(const Eigen::MatrixXd& L,
                                  const Eigen::MatrixXd& B) {
  return solve_lower_t(L, solve_lower(L, B));
}

}  // namespace dmgp
