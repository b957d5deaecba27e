#include "dmgp/matrix_normal.hpp"

#include <cmath>

#include "dmgp/cholesky.hpp"
#include "dmgp/errors.hpp"

namespace dmgp {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_shapes(const MatrixNormal& d) {
  require(d.row_cov.rows() == d.mean.rows() &&
              d.row_cov.cols() == d.mean.rows(),
          "matrix normal: row_cov must be n x n");
  require(d.col_cov.rows() == d.mean.cols() &&
              d.col_cov.cols() == d.mean.cols(),
          "matrix normal: col_cov must be p x p");
}
}  // namespace

double mn_log_density(const Eigen::MatrixXd& x, const MatrixNormal& dist) {
  check_shapes(dist);
  require(x.rows() == dist.mean.rows() && x.cols() == dist.mean.cols(),
          "mn_log_density: x shape must match mean");
  const double n = static_cast<double>(dist.mean.rows());
  const double p = static_cast<double>(dist.mean.cols());

  const CholeskyFactor lk = cholesky(dist.row_cov);
  const CholeskyFactor ls = cholesky(dist.col_cov);
  const Eigen::MatrixXd t = solve_lower(lk.lower, x - dist.mean);
  const double quad = solve_lower(ls.lower, t.transpose()).squaredNorm();
  return -0.5 * n * p * kLog2Pi - 0.5 * p * lk.log_det() -
         0.5 * n * ls.log_det() - 0.5 * quad;
}

Eigen::MatrixXd mn_sample(const MatrixNormal& dist,
                          const Eigen::MatrixXd& noise) {
  check_shapes(dist);
  require(noise.rows() == dist.mean.rows() && noise.cols() == dist.mean.cols(),
          "mn_sample: noise shape must match mean");
  const CholeskyFactor lk = cholesky(dist.row_cov);
  const CholeskyFactor ls = cholesky(dist.col_cov);
  return dist.mean + lk.lower * noise * ls.lower.transpose();
}

double mn_kl_shared_colcov(const MatrixNormal& q, const MatrixNormal& p) {
  check_shapes(q);
  check_shapes(p);
  require(q.mean.rows() == p.mean.rows() && q.mean.cols() == p.mean.cols(),
          "mn_kl_shared_colcov: mean shapes must agree");
  require((q.col_cov - p.col_cov).cwiseAbs().maxCoeff() <= 1e-12,
          "mn_kl_shared_colcov: column covariances must be the same matrix");

  const double m = static_cast<double>(q.mean.rows());
  const double d = static_cast<double>(q.mean.cols());
  CholeskyFactor lk, ls, lsig;
  try {
    lk = cholesky(p.row_cov);
    ls = cholesky(q.row_cov);
    lsig = cholesky(q.col_cov);
  } catch (const NotPositiveDefinite& e) {
    throw ContractViolation(std::string("mn_kl_shared_colcov: ") + e.what());
  }

  const double tr_ks = solve_lower(lk.lower, ls.lower).squaredNorm();
  const Eigen::MatrixXd t = solve_lower(lk.lower, q.mean - p.mean);
  const double mahal = solve_lower(lsig.lower, t.transpose()).squaredNorm();
  return 0.5 * (d * tr_ks - m * d + d * (lk.log_det() - ls.log_det()) + mahal);
}

}  // namespace dmgp
