#pragma once

#include <Eigen/Dense>

#include "dmgp/kernel.hpp"
#include "dmgp/matrix_normal.hpp"
#include "dmgp/rng.hpp"

namespace dmgp {

// One sparse matrix-variate GP layer.  All covariance-like quantities are
// stored as lower Cholesky factors with positive diagonals; values here
// are always in constrained form (factors, variances), the optimizer's
// unconstrained view lives in the model's parameter packing.
struct LayerParams {
  Eigen::MatrixXd Z;     // M x Din inducing inputs
  Eigen::MatrixXd A;     // M x Dout variational mean
  Eigen::MatrixXd Ls;    // M x M lower factor, S = Ls Ls^T
  Eigen::MatrixXd Lsig;  // Dout x Dout lower factor, Sigma = Lsig Lsig^T
  SeArdKernel kernel;    // Din lengthscales
  Eigen::MatrixXd H;     // Din x Dout linear mean weights
  Eigen::RowVectorXd b;  // 1 x Dout linear mean bias
  Eigen::VectorXd W;     // Dout noise variances; empty on the final layer

  Eigen::Index m() const { return Z.rows(); }
  Eigen::Index din() const { return Z.cols(); }
  Eigen::Index dout() const { return A.cols(); }
  bool is_final() const { return W.size() == 0; }

  // Linear mean m(X) = X H + b applied row-wise.
  Eigen::MatrixXd mean_function(const Eigen::MatrixXd& x) const;

  Eigen::MatrixXd sigma() const { return Lsig * Lsig.transpose(); }
};

// Marginal of the variational posterior at one input: a Gaussian with mean
// ctil and covariance rt * Sigma (+ diag(W) on intermediate layers).
struct PropagatedGaussian {
  Eigen::VectorXd ctil;
  double rt = 0.0;           // clamped at 0
  double rt_unclamped = 0.0; // kept for diagnostics and tests
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd lsig;      // factor of sigma, reused when sampling
  Eigen::VectorXd w;         // empty on the final layer

  Eigen::MatrixXd cov() const {
    Eigen::MatrixXd c = rt * sigma;
    if (w.size() > 0) c.diagonal() += w;
    return c;
  }
};

// Prior over the inducing outputs: MN(m(Z), K_ZZ + jitter, Sigma).
MatrixNormal layer_prior(const LayerParams& layer);

// Analytic marginalization of q(U) through the FITC conditional:
//   ctil = m(x) + k_xZ Kzz^-1 (A - m(Z))
//   rt   = k_xx - k_xZ Kzz^-1 (Kzz - S) Kzz^-1 k_Zx, clamped at 0.
PropagatedGaussian propagate(const LayerParams& layer,
                             const Eigen::VectorXd& input, bool is_final);

// Reparameterized draw ctil + chol(rt Sigma + diag(W)) * noise.  The
// W-free case uses sqrt(rt) * Lsig directly, so rt = 0 returns ctil
// exactly.
Eigen::VectorXd sample_layer(const PropagatedGaussian& prop,
                             const Eigen::VectorXd& noise);

// Precomputed factorizations for repeated propagation at fixed parameters
// (prediction-time hot path).
struct LayerCache {
  Eigen::MatrixXd lzz;    // chol factor of Kzz (+jitter)
  Eigen::MatrixXd asol;   // Kzz^-1 (A - m(Z)), M x Dout
};

LayerCache build_layer_cache(const LayerParams& layer);
PropagatedGaussian propagate_cached(const LayerParams& layer,
                                    const LayerCache& cache,
                                    const Eigen::VectorXd& input,
                                    bool is_final);

// k-means++ seeding plus a few Lloyd refinement sweeps; used to place
// inducing inputs on the first layer's training inputs.
Eigen::MatrixXd kmeanspp_centers(const Eigen::MatrixXd& x, Eigen::Index m,
                                 Rng& rng, int lloyd_iters = 10);

// Fresh layer with near-identity mean, A = m(Z), S = 1e-4 * Kzz and unit
// Sigma; w0 < 0 (or the final layer) leaves W empty.
LayerParams make_layer(const Eigen::MatrixXd& z, Eigen::Index dout,
                       bool final_layer, const Eigen::VectorXd& ell0,
                       double w0);

}  // namespace dmgp
