#include "dmgp/layer.hpp"

#include <cmath>
#include <limits>

#include "dmgp/cholesky.hpp"
#include "dmgp/errors.hpp"

namespace dmgp {

Eigen::MatrixXd LayerParams::mean_function(const Eigen::MatrixXd& x) const {
  require(x.cols() == H.rows(), "mean_function: input dim mismatch");
  Eigen::MatrixXd out = x * H;
  out.rowwise() += b;
  return out;
}

MatrixNormal layer_prior(const LayerParams& layer) {
  Eigen::MatrixXd kzz = layer.kernel.cross(layer.Z, layer.Z);
  const CholeskyFactor f = cholesky(kzz);
  kzz.diagonal().array() += f.jitter_used;
  return MatrixNormal{layer.mean_function(layer.Z), kzz, layer.sigma()};
}

PropagatedGaussian propagate(const LayerParams& layer,
                             const Eigen::VectorXd& input, bool is_final) {
  return propagate_cached(layer, build_layer_cache(layer), input, is_final);
}

LayerCache build_layer_cache(const LayerParams& layer) {
  LayerCache cache;
  cache.lzz = cholesky(layer.kernel.cross(layer.Z, layer.Z)).lower;
  cache.asol =
      chol_solve(cache.lzz, layer.A - layer.mean_function(layer.Z));
  return cache;
}

PropagatedGaussian propagate_cached(const LayerParams& layer,
                                    const LayerCache& cache,
                                    const Eigen::VectorXd& input,
                                    bool is_final) {
  require(input.size() == layer.din(), "propagate: input length mismatch");
  const Eigen::MatrixXd xrow = input.transpose();
  const Eigen::MatrixXd kx = layer.kernel.cross(xrow, layer.Z);  // 1 x M

  const Eigen::MatrixXd t1 = solve_lower(cache.lzz, kx.transpose());
  const double q1 = t1.squaredNorm();
  const Eigen::MatrixXd a = solve_lower_t(cache.lzz, t1);  // Kzz^-1 k_Zx
  const double q2 = (layer.Ls.transpose() * a).squaredNorm();

  PropagatedGaussian prop;
  prop.rt_unclamped = layer.kernel.sf2() - q1 + q2;
  prop.rt = std::max(0.0, prop.rt_unclamped);
  prop.ctil = (layer.mean_function(xrow) + kx * cache.asol).row(0);
  prop.lsig = layer.Lsig;
  prop.sigma = layer.sigma();
  if (!is_final) prop.w = layer.W;
  return prop;
}

Eigen::VectorXd sample_layer(const PropagatedGaussian& prop,
                             const Eigen::VectorXd& noise) {
  require(noise.size() == prop.ctil.size(),
          "sample_layer: noise length mismatch");
  if (prop.w.size() == 0 || prop.w.maxCoeff() == 0.0) {
    // chol(rt * Sigma) = sqrt(rt) * Lsig, exact even at rt = 0.
    return prop.ctil + std::sqrt(prop.rt) * (prop.lsig * noise);
  }
  const CholeskyFactor f = cholesky(prop.cov());
  return prop.ctil + f.lower * noise;
}

Eigen::MatrixXd kmeanspp_centers(const Eigen::MatrixXd& x, Eigen::Index m,
                                 Rng& rng, int lloyd_iters) {
  require(x.rows() > 0 && m > 0, "kmeanspp: empty input");
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centers(m, x.cols());

  if (m >= n) {
    // Degenerate request: return every point, padding with jittered
    // duplicates so the kernel matrix stays nonsingular after escalation.
    for (Eigen::Index i = 0; i < m; ++i) {
      centers.row(i) = x.row(i % n);
      if (i >= n) centers.row(i) += 1e-3 * rng.normal_vector(x.cols()).transpose();
    }
    return centers;
  }

  // Seeding: first center uniform, the rest proportional to squared
  // distance from the nearest chosen center.
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.uniform_int(n)));
  Eigen::VectorXd d2 =
      (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < m; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (; pick < n - 1; ++pick) {
        u -= d2[pick];
        if (u <= 0.0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.uniform_int(n));
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin(
        (x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  Eigen::VectorXi assign(n);
  for (int it = 0; it < lloyd_iters; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < m; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assign[i] = static_cast<int>(best);
    }
    for (Eigen::Index c = 0; c < m; ++c) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(x.cols());
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (assign[i] == c) {
          sum += x.row(i);
          ++count;
        }
      if (count > 0)
        centers.row(c) = sum / count;
      else
        centers.row(c) = x.row(static_cast<Eigen::Index>(rng.uniform_int(n)));
    }
  }
  return centers;
}

LayerParams make_layer(const Eigen::MatrixXd& z, Eigen::Index dout,
                       bool final_layer, const Eigen::VectorXd& ell0,
                       double w0) {
  LayerParams layer;
  layer.Z = z;
  const Eigen::Index din = z.cols();
  layer.kernel = SeArdKernel(din);
  layer.kernel.log_ell = ell0.array().max(1e-3).log();
  layer.kernel.log_sf = 0.0;

  layer.H = Eigen::MatrixXd::Zero(din, dout);
  for (Eigen::Index i = 0; i < std::min(din, dout); ++i) layer.H(i, i) = 1.0;
  layer.b = Eigen::RowVectorXd::Zero(dout);

  layer.A = layer.mean_function(z);
  // Small variational covariance keeps the initial stack near its mean
  // path; S = 1e-4 * Kzz scales with the kernel.
  layer.Ls = 1e-2 * cholesky(layer.kernel.cross(z, z)).lower;
  layer.Lsig = Eigen::MatrixXd::Identity(dout, dout);
  if (!final_layer) {
    require(w0 > 0.0, "make_layer: intermediate layers need positive noise");
    layer.W = Eigen::VectorXd::Constant(dout, w0);
  }
  return layer;
}

}  // namespace dmgp
