#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dmgp/cholesky.hpp"
#include "dmgp/errors.hpp"
#include "dmgp/layer.hpp"
#include "dmgp/matrix_normal.hpp"
#include "dmgp/rng.hpp"
#include "oracles.hpp"

using dmgp::LayerParams;
using dmgp::PropagatedGaussian;
using dmgp::Rng;

namespace {

// Random well-conditioned layer for property tests.
LayerParams random_layer(Rng& rng, Eigen::Index m, Eigen::Index din,
                         Eigen::Index dout, bool final_layer) {
  LayerParams layer;
  layer.Z = 2.0 * rng.normal_matrix(m, din);
  layer.kernel = dmgp::SeArdKernel(din);
  layer.kernel.log_ell = 0.2 * rng.normal_vector(din);
  layer.kernel.log_sf = 0.2 * rng.normal();
  layer.H = rng.normal_matrix(din, dout);
  layer.b = rng.normal_vector(dout).transpose();
  layer.A = layer.mean_function(layer.Z) + 0.5 * rng.normal_matrix(m, dout);
  Eigen::MatrixXd ls = 0.3 * rng.normal_matrix(m, m);
  layer.Ls = ls.triangularView<Eigen::Lower>().toDenseMatrix();
  layer.Ls.diagonal() = layer.Ls.diagonal().array().abs() + 0.3;
  Eigen::MatrixXd lg = 0.3 * rng.normal_matrix(dout, dout);
  layer.Lsig = lg.triangularView<Eigen::Lower>().toDenseMatrix();
  layer.Lsig.diagonal() = layer.Lsig.diagonal().array().abs() + 0.5;
  if (!final_layer)
    layer.W = (0.05 + 0.1 * rng.normal_vector(dout).array().abs()).matrix();
  return layer;
}

}  // namespace

TEST_CASE("layer prior trivial cases") {
  // Single inducing point at the origin with a zero mean function.
  LayerParams layer;
  layer.Z = Eigen::MatrixXd::Zero(1, 1);
  layer.kernel = dmgp::SeArdKernel(1);
  layer.kernel.log_sf = 0.5 * std::log(1.7);  // sf2 = 1.7
  layer.H = Eigen::MatrixXd::Zero(1, 1);
  layer.b = Eigen::RowVectorXd::Zero(1);
  layer.A = Eigen::MatrixXd::Zero(1, 1);
  layer.Ls = Eigen::MatrixXd::Identity(1, 1);
  layer.Lsig = Eigen::MatrixXd::Identity(1, 1);

  const dmgp::MatrixNormal prior = dmgp::layer_prior(layer);
  CHECK(prior.mean(0, 0) == 0.0);
  CHECK(prior.row_cov(0, 0) == doctest::Approx(1.7).epsilon(1e-12));

  // Prior-matching variational parameters give zero KL.
  Rng rng(31);
  LayerParams full = random_layer(rng, 4, 2, 3, false);
  const dmgp::MatrixNormal p = dmgp::layer_prior(full);
  dmgp::MatrixNormal q = p;  // A = m(Z), S = Kzz + jitter
  CHECK(dmgp::mn_kl_shared_colcov(q, p) ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
}

TEST_CASE("near-singular gram engages jitter") {
  LayerParams layer;
  layer.Z = Eigen::MatrixXd::Zero(3, 1);
  layer.Z << 0.0, 0.01, 0.02;
  layer.kernel = dmgp::SeArdKernel(1);
  layer.kernel.log_ell[0] = std::log(1e3);  // huge lengthscale
  layer.H = Eigen::MatrixXd::Zero(1, 1);
  layer.b = Eigen::RowVectorXd::Zero(1);
  layer.A = Eigen::MatrixXd::Zero(3, 1);
  layer.Ls = Eigen::MatrixXd::Identity(3, 3);
  layer.Lsig = Eigen::MatrixXd::Identity(1, 1);

  const Eigen::MatrixXd kzz = layer.kernel.cross(layer.Z, layer.Z);
  CHECK((kzz.array() > 0.999).all());  // nearly all-ones
  const dmgp::CholeskyFactor f = dmgp::cholesky(kzz);
  CHECK(f.jitter_used > 0.0);
  CHECK_NOTHROW((void)dmgp::layer_prior(layer));
}

TEST_CASE("propagate at the sole inducing point interpolates") {
  LayerParams layer;
  layer.Z = Eigen::MatrixXd::Constant(1, 1, 0.4);
  layer.kernel = dmgp::SeArdKernel(1);
  layer.H = Eigen::MatrixXd::Constant(1, 1, 2.0);
  layer.b = Eigen::RowVectorXd::Constant(1, -0.3);
  const double delta = 0.77;
  layer.A = layer.mean_function(layer.Z).array() + delta;
  layer.Ls = 1e-9 * Eigen::MatrixXd::Identity(1, 1);  // S -> 0
  layer.Lsig = Eigen::MatrixXd::Identity(1, 1);

  Eigen::VectorXd x(1);
  x << 0.4;
  const PropagatedGaussian prop = dmgp::propagate(layer, x, true);
  const double mx = 2.0 * 0.4 - 0.3;
  CHECK(prop.ctil[0] == doctest::Approx(mx + delta).epsilon(1e-9));
  CHECK(prop.rt == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("prior-matching S recovers the prior marginal variance") {
  Rng rng(32);
  LayerParams layer = random_layer(rng, 5, 2, 2, true);
  layer.Ls = dmgp::cholesky(layer.kernel.cross(layer.Z, layer.Z)).lower;

  const Eigen::VectorXd x = rng.normal_vector(2);
  const PropagatedGaussian prop = dmgp::propagate(layer, x, true);
  // With S = Kzz the -q1 and +q2 terms cancel, leaving k_xx.
  CHECK(prop.rt == doctest::Approx(layer.kernel.sf2()).epsilon(1e-9));

  // And S = 0 leaves the conditional (Schur) variance.
  layer.Ls = 1e-12 * Eigen::MatrixXd::Identity(5, 5);
  const PropagatedGaussian prop0 = dmgp::propagate(layer, x, true);
  const Eigen::MatrixXd kzz = layer.kernel.cross(layer.Z, layer.Z);
  const Eigen::MatrixXd kx = layer.kernel.cross(x.transpose(), layer.Z);
  const Eigen::MatrixXd lzz = dmgp::cholesky(kzz).lower;
  const double schur =
      layer.kernel.sf2() -
      dmgp::solve_lower(lzz, kx.transpose()).squaredNorm();
  CHECK(prop0.rt == doctest::Approx(schur).epsilon(1e-9));
}

TEST_CASE("propagate matches monte carlo marginalization") {
  Rng rng(33);
  LayerParams layer = random_layer(rng, 3, 2, 2, false);
  const Eigen::VectorXd x = 0.5 * rng.normal_vector(2);
  const PropagatedGaussian prop = dmgp::propagate(layer, x, false);

  // Draw U ~ MN(A, S, Sigma), then f | U from the FITC conditional with
  // covariance r_schur * Sigma + diag(W); the resulting mean/cov must
  // match the analytic marginal.
  const Eigen::MatrixXd kzz = layer.kernel.cross(layer.Z, layer.Z);
  const Eigen::MatrixXd lzz = dmgp::cholesky(kzz).lower;
  const Eigen::MatrixXd kx = layer.kernel.cross(x.transpose(), layer.Z);
  const Eigen::MatrixXd asol = dmgp::chol_solve(lzz, kx.transpose());
  const double r_schur =
      layer.kernel.sf2() -
      dmgp::solve_lower(lzz, kx.transpose()).squaredNorm();
  Eigen::MatrixXd cond_cov = r_schur * layer.sigma();
  cond_cov.diagonal() += layer.W;
  const Eigen::MatrixXd lcond = dmgp::cholesky(cond_cov).lower;
  const Eigen::MatrixXd mz = layer.mean_function(layer.Z);
  const Eigen::RowVectorXd mx = layer.mean_function(x.transpose()).row(0);

  const int draws = 200000;
  Eigen::Vector2d mean_acc = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov_acc = Eigen::Matrix2d::Zero();
  const dmgp::MatrixNormal qu{layer.A, layer.Ls * layer.Ls.transpose(),
                              layer.sigma()};
  for (int s = 0; s < draws; ++s) {
    const Eigen::MatrixXd u = dmgp::mn_sample(qu, rng.normal_matrix(3, 2));
    const Eigen::RowVectorXd cmean =
        mx + (asol.transpose() * (u - mz)).row(0);
    const Eigen::Vector2d f =
        cmean.transpose() + lcond * rng.normal_vector(2);
    mean_acc += f;
    cov_acc += f * f.transpose();
  }
  const Eigen::Vector2d mc_mean = mean_acc / draws;
  const Eigen::Matrix2d mc_cov =
      cov_acc / draws - mc_mean * mc_mean.transpose();

  CHECK((mc_mean - prop.ctil).cwiseAbs().maxCoeff() < 1e-2);
  CHECK((mc_cov - prop.cov()).cwiseAbs().maxCoeff() < 2e-2);
}

TEST_CASE("sample_layer trivial and empirical") {
  Rng rng(34);
  LayerParams layer = random_layer(rng, 4, 2, 2, false);
  const Eigen::VectorXd x = rng.normal_vector(2);
  PropagatedGaussian prop = dmgp::propagate(layer, x, false);

  CHECK((dmgp::sample_layer(prop, Eigen::VectorXd::Zero(2)) - prop.ctil)
            .cwiseAbs()
            .maxCoeff() == 0.0);

  // Degenerate: rt = 0 and no noise returns ctil for any noise.
  PropagatedGaussian degenerate = prop;
  degenerate.rt = 0.0;
  degenerate.w.resize(0);
  const Eigen::VectorXd noise = rng.normal_vector(2);
  CHECK((dmgp::sample_layer(degenerate, noise) - degenerate.ctil)
            .cwiseAbs()
            .maxCoeff() == 0.0);

  const int draws = 100000;
  Eigen::Vector2d mean_acc = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov_acc = Eigen::Matrix2d::Zero();
  for (int s = 0; s < draws; ++s) {
    const Eigen::Vector2d f = dmgp::sample_layer(prop, rng.normal_vector(2));
    mean_acc += f;
    cov_acc += f * f.transpose();
  }
  const Eigen::Vector2d mc_mean = mean_acc / draws;
  const Eigen::Matrix2d mc_cov =
      cov_acc / draws - mc_mean * mc_mean.transpose();
  const double rel = (mc_cov - prop.cov()).norm() / prop.cov().norm();
  CHECK(rel < 0.05);
}

TEST_CASE("identity sigma factorizes into independent scalar GPs") {
  Rng rng(35);
  LayerParams layer = random_layer(rng, 5, 2, 3, false);
  layer.Lsig = Eigen::MatrixXd::Identity(3, 3);

  const Eigen::VectorXd x = rng.normal_vector(2);
  const PropagatedGaussian prop = dmgp::propagate(layer, x, false);
  const Eigen::MatrixXd cov = prop.cov();

  // Cross-dimension covariance is exactly zero; each marginal variance is
  // rt + W_d.
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      if (i != j) CHECK(cov(i, j) == 0.0);
  for (Eigen::Index d = 0; d < 3; ++d)
    CHECK(cov(d, d) == doctest::Approx(prop.rt + layer.W[d]).epsilon(1e-12));

  // Each output dimension reproduces the scalar sparse-GP marginal
  // computed independently from column d of A.
  const Eigen::MatrixXd kzz = layer.kernel.cross(layer.Z, layer.Z);
  const Eigen::MatrixXd lzz = dmgp::cholesky(kzz).lower;
  const Eigen::MatrixXd kx = layer.kernel.cross(x.transpose(), layer.Z);
  const Eigen::MatrixXd mz = layer.mean_function(layer.Z);
  const Eigen::RowVectorXd mx = layer.mean_function(x.transpose()).row(0);
  for (Eigen::Index d = 0; d < 3; ++d) {
    const Eigen::VectorXd resid = layer.A.col(d) - mz.col(d);
    const double scalar_mean =
        mx[d] + (kx * dmgp::chol_solve(lzz, resid))(0, 0);
    CHECK(prop.ctil[d] == doctest::Approx(scalar_mean).epsilon(1e-10));
  }
}

TEST_CASE("unclamped rt stays above -1e-8 on random instances") {
  Rng rng(36);
  for (int rep = 0; rep < 50; ++rep) {
    LayerParams layer = random_layer(rng, 6, 2, 2, true);
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd x = 3.0 * rng.normal_vector(2);
      const PropagatedGaussian prop = dmgp::propagate(layer, x, true);
      CHECK(prop.rt_unclamped >= -1e-8);
    }
  }
}

TEST_CASE("dense conditional agrees with partitioned vectorized gaussian") {
  // Appendix-style check: the conditional p(F | U) = MN(C, R, Sigma) with
  // R the Schur complement must match conditioning of the dense joint
  // Gaussian over vec([U; F]).
  Rng rng(37);
  const Eigen::Index m = 3, n = 4, din = 2, dd = 2;
  LayerParams layer = random_layer(rng, m, din, dd, true);
  const Eigen::MatrixXd x = rng.normal_matrix(n, din);
  const Eigen::MatrixXd u = rng.normal_matrix(m, dd);

  const Eigen::MatrixXd kzz = layer.kernel.cross(layer.Z, layer.Z);
  const Eigen::MatrixXd kxz = layer.kernel.cross(x, layer.Z);
  const Eigen::MatrixXd kxx = layer.kernel.cross(x, x);
  const Eigen::MatrixXd lzz = dmgp::cholesky(kzz).lower;
  const Eigen::MatrixXd mz = layer.mean_function(layer.Z);
  const Eigen::MatrixXd mx = layer.mean_function(x);

  // Matrix-variate conditional.
  const Eigen::MatrixXd cmean =
      mx + kxz * dmgp::chol_solve(lzz, u - mz);
  const Eigen::MatrixXd r =
      kxx - kxz * dmgp::chol_solve(lzz, kxz.transpose());

  // Dense route: rows [Z; X] with row covariance blocks, vectorized.
  const Eigen::Index rows = m + n;
  Eigen::MatrixXd krow(rows, rows);
  krow.topLeftCorner(m, m) = kzz;
  krow.topRightCorner(m, n) = kxz.transpose();
  krow.bottomLeftCorner(n, m) = kxz;
  krow.bottomRightCorner(n, n) = kxx;
  // Tiny diagonal lift keeps the big joint factorizable; it cancels in
  // the comparison up to the 1e-9 tolerance.
  krow.diagonal().array() += 1e-12;
  Eigen::MatrixXd joint_mean(rows, dd);
  joint_mean.topRows(m) = mz;
  joint_mean.bottomRows(n) = mx;
  const Eigen::MatrixXd sigma = layer.sigma();
  const Eigen::MatrixXd cov = oracle::kron(sigma, krow);
  const Eigen::VectorXd mu = oracle::vec(joint_mean);

  // Index maps for vec([U; F]): column d occupies rows d*rows..d*rows+rows.
  std::vector<Eigen::Index> ui, fi;
  for (Eigen::Index d = 0; d < dd; ++d) {
    for (Eigen::Index i = 0; i < m; ++i) ui.push_back(d * rows + i);
    for (Eigen::Index i = 0; i < n; ++i) fi.push_back(d * rows + m + i);
  }
  const auto slice = [&](const std::vector<Eigen::Index>& ri,
                         const std::vector<Eigen::Index>& ci) {
    Eigen::MatrixXd out(ri.size(), ci.size());
    for (std::size_t a = 0; a < ri.size(); ++a)
      for (std::size_t b = 0; b < ci.size(); ++b)
        out(a, b) = cov(ri[a], ci[b]);
    return out;
  };
  const Eigen::MatrixXd c11 = slice(ui, ui);
  const Eigen::MatrixXd c12 = slice(ui, fi);
  const Eigen::MatrixXd c22 = slice(fi, fi);
  Eigen::VectorXd mu1(ui.size()), mu2(fi.size());
  for (std::size_t a = 0; a < ui.size(); ++a) mu1[a] = mu[ui[a]];
  for (std::size_t a = 0; a < fi.size(); ++a) mu2[a] = mu[fi[a]];

  Eigen::LDLT<Eigen::MatrixXd> ldlt(c11);
  const Eigen::VectorXd cond_mean =
      mu2 + c12.transpose() * ldlt.solve(oracle::vec(u) - mu1);
  const Eigen::MatrixXd cond_cov = c22 - c12.transpose() * ldlt.solve(c12);

  CHECK((cond_mean - oracle::vec(cmean)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((cond_cov - oracle::kron(sigma, r)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cached propagation matches direct") {
  Rng rng(38);
  LayerParams layer = random_layer(rng, 6, 3, 2, false);
  const dmgp::LayerCache cache = dmgp::build_layer_cache(layer);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd x = rng.normal_vector(3);
    const PropagatedGaussian a = dmgp::propagate(layer, x, false);
    const PropagatedGaussian b =
        dmgp::propagate_cached(layer, cache, x, false);
    CHECK((a.ctil - b.ctil).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.rt == b.rt);
  }
}
