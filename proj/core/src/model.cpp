#include "dmgp/model.hpp"

#include <cmath>
#include <sstream>

#include "dmgp/ad.hpp"
#include "dmgp/cholesky.hpp"
#include "dmgp/errors.hpp"

namespace dmgp {

namespace {

// Packed unconstrained view of a lower factor: column-major lower
// triangle, diagonal through log.  Matches ad::Tape::lower_from_packed.
Eigen::MatrixXd pack_lower(const Eigen::MatrixXd& l) {
  const Eigen::Index n = l.rows();
  Eigen::MatrixXd p(n * (n + 1) / 2, 1);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i, ++k)
      p(k, 0) = (i == j) ? std::log(l(i, j)) : l(i, j);
  return p;
}

Eigen::MatrixXd unpack_lower(const Eigen::MatrixXd& p, Eigen::Index n) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i, ++k)
      l(i, j) = (i == j) ? std::exp(p(k, 0)) : p(k, 0);
  return l;
}

struct BlockDef {
  std::string name;
  ParamBlock::Role role;
  int layer;
  Eigen::MatrixXd value;
  Eigen::Index matrix_entries;
};

// The optimizer works on the whitened inducing distribution: A_white =
// Lzz^-1 (A - m(Z)) and S factor Lzz^-1 Ls.  The KL then has identity
// conditioning regardless of how ill-conditioned Kzz is, which is what
// makes first-order training of the inducing outputs viable.
std::vector<BlockDef> unconstrained_blocks(const DmgpModel& model) {
  using Role = ParamBlock::Role;
  std::vector<BlockDef> blocks;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerParams& layer = model.layers[l];
    const int li = static_cast<int>(l);
    const std::string prefix = "layer" + std::to_string(l) + ".";
    const Eigen::Index m = layer.m(), din = layer.din(), dout = layer.dout();
    const Eigen::MatrixXd lzz =
        cholesky(layer.kernel.cross(layer.Z, layer.Z)).lower;
    blocks.push_back({prefix + "Z", Role::inducing, li, layer.Z, m * din});
    blocks.push_back(
        {prefix + "A_white", Role::variational_mean, li,
         solve_lower(lzz, layer.A - layer.mean_function(layer.Z)),
         m * dout});
    blocks.push_back({prefix + "S_factor_white", Role::covariance, li,
                      pack_lower(solve_lower(lzz, layer.Ls)), m * m});
    blocks.push_back({prefix + "Sigma_factor", Role::covariance, li,
                      pack_lower(layer.Lsig), dout * dout});
    blocks.push_back({prefix + "log_ell", Role::kernel, li,
                      layer.kernel.log_ell, din});
    blocks.push_back({prefix + "log_sf", Role::kernel, li,
                      Eigen::MatrixXd::Constant(1, 1, layer.kernel.log_sf),
                      1});
    blocks.push_back({prefix + "H", Role::mean, li, layer.H, din * dout});
    blocks.push_back({prefix + "b", Role::mean, li, layer.b, dout});
    if (!layer.is_final())
      blocks.push_back({prefix + "log_W", Role::noise, li,
                        layer.W.array().log().matrix(), dout});
  }
  blocks.push_back({"log_sigma_y2", ParamBlock::Role::likelihood, -1,
                    Eigen::MatrixXd::Constant(1, 1, std::log(model.sigma_y2)),
                    1});
  return blocks;
}

// Total unconstrained length from dimensions alone, so unpack can size
// its input even when current values are unusable (mid-recovery).
Eigen::Index param_count(const DmgpModel& model) {
  Eigen::Index total = 1;  // log_sigma_y2
  for (const LayerParams& layer : model.layers) {
    const Eigen::Index m = layer.m(), din = layer.din(), dout = layer.dout();
    total += m * din + m * dout + m * (m + 1) / 2 +
             dout * (dout + 1) / 2 + din + 1 + din * dout + dout;
    if (!layer.is_final()) total += dout;
  }
  return total;
}

}  // namespace

std::vector<ParamBlock> DmgpModel::registry() const {
  std::vector<ParamBlock> out;
  Eigen::Index offset = 0;
  for (const BlockDef& b : unconstrained_blocks(*this)) {
    ParamBlock pb;
    pb.name = b.name;
    pb.role = b.role;
    pb.layer = b.layer;
    pb.offset = offset;
    pb.size = b.value.size();
    pb.matrix_entries = b.matrix_entries;
    offset += pb.size;
    out.push_back(std::move(pb));
  }
  return out;
}

Eigen::VectorXd DmgpModel::pack() const {
  const auto blocks = unconstrained_blocks(*this);
  Eigen::Index total = 0;
  for (const auto& b : blocks) total += b.value.size();
  Eigen::VectorXd theta(total);
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    theta.segment(off, b.value.size()) =
        Eigen::Map<const Eigen::VectorXd>(b.value.data(), b.value.size());
    off += b.value.size();
  }
  return theta;
}

void DmgpModel::unpack(const Eigen::VectorXd& theta) {
  require(theta.size() == param_count(*this),
          "unpack: parameter vector length mismatch");

  Eigen::Index off = 0;
  auto take = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd v =
        Eigen::Map<const Eigen::MatrixXd>(theta.data() + off, rows, cols);
    off += rows * cols;
    return v;
  };
  for (LayerParams& layer : layers) {
    const Eigen::Index m = layer.m(), din = layer.din(), dout = layer.dout();
    layer.Z = take(m, din);
    const Eigen::MatrixXd a_white = take(m, dout);
    const Eigen::MatrixXd ls_white =
        unpack_lower(take(m * (m + 1) / 2, 1), m);
    layer.Lsig = unpack_lower(take(dout * (dout + 1) / 2, 1), dout);
    layer.kernel.log_ell = take(din, 1);
    layer.kernel.log_sf = take(1, 1)(0, 0);
    layer.H = take(din, dout);
    layer.b = take(1, dout);
    if (!layer.is_final())
      layer.W = take(dout, 1).array().exp().matrix();
    const Eigen::MatrixXd lzz =
        cholesky(layer.kernel.cross(layer.Z, layer.Z)).lower;
    layer.A = layer.mean_function(layer.Z) + lzz * a_white;
    layer.Ls = lzz * ls_white;
  }
  sigma_y2 = std::exp(take(1, 1)(0, 0));
  cache_valid_ = false;
}

Eigen::Index DmgpModel::covariance_entry_count() const {
  Eigen::Index total = 0;
  for (const ParamBlock& b : registry())
    if (b.role == ParamBlock::Role::covariance) total += b.matrix_entries;
  return total;
}

void DmgpModel::refresh_cache() {
  cache_.clear();
  cache_.reserve(layers.size());
  for (const LayerParams& layer : layers)
    cache_.push_back(build_layer_cache(layer));
  cache_valid_ = true;
}

Eigen::VectorXd DmgpModel::forward_sample(
    const Eigen::VectorXd& x,
    const std::vector<Eigen::VectorXd>& noise_stack) const {
  require(noise_stack.size() == layers.size(),
          "forward_sample: need one noise vector per layer");
  Eigen::VectorXd state = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const bool is_final = (l + 1 == layers.size());
    const PropagatedGaussian prop =
        cache_valid_
            ? propagate_cached(layers[l], cache_[l], state, is_final)
            : propagate(layers[l], state, is_final);
    state = sample_layer(prop, noise_stack[l]);
  }
  return state;
}

PredictiveGaussian DmgpModel::predict(const Eigen::VectorXd& x) const {
  require(cache_valid_,
          "predict: stale cache; call refresh_cache() after mutating "
          "parameters");
  require(k_pred >= 2, "predict: k_pred must be at least 2");
  require(x.size() == input_dim(), "predict: input length mismatch");
  Rng rng(derive_seed(seed, "predict"));
  const Eigen::Index kp = k_pred;
  // All k_pred draws run through each layer as one batch.
  Eigen::MatrixXd cur = x.transpose().replicate(kp, 1);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& ly = layers[l];
    const LayerCache& cl = cache_[l];
    const bool is_final = (l + 1 == layers.size());
    const Eigen::Index dout = ly.dout();

    const Eigen::MatrixXd kx = ly.kernel.cross(cur, ly.Z);           // kp x M
    const Eigen::MatrixXd t1 = solve_lower(cl.lzz, kx.transpose());  // M x kp
    const Eigen::MatrixXd a = solve_lower_t(cl.lzz, t1);
    const Eigen::MatrixXd lsa = ly.Ls.transpose() * a;
    const Eigen::MatrixXd ctil = ly.mean_function(cur) + kx * cl.asol;
    const Eigen::MatrixXd eps = rng.normal_matrix(kp, dout);

    Eigen::VectorXd rt(kp);
    for (Eigen::Index k = 0; k < kp; ++k)
      rt[k] = std::max(0.0, ly.kernel.sf2() - t1.col(k).squaredNorm() +
                                lsa.col(k).squaredNorm());

    Eigen::MatrixXd next(kp, dout);
    if (is_final || ly.W.size() == 0 || ly.W.maxCoeff() == 0.0) {
      next = ctil +
             rt.cwiseSqrt().asDiagonal() * (eps * ly.Lsig.transpose());
    } else {
      const Eigen::MatrixXd sigma = ly.sigma();
      for (Eigen::Index k = 0; k < kp; ++k) {
        Eigen::MatrixXd cov = rt[k] * sigma;
        cov.diagonal() += ly.W;
        next.row(k) = ctil.row(k) +
                      (cholesky(cov).lower * eps.row(k).transpose())
                          .transpose();
      }
    }
    cur = std::move(next);
  }
  PredictiveGaussian out;
  out.mean = cur.colwise().mean();
  const Eigen::MatrixXd centered = cur.rowwise() - out.mean.transpose();
  out.cov = centered.transpose() * centered / double(kp - 1);
  const double ridge = 1e-8 * out.cov.diagonal().mean();
  out.cov.diagonal().array() += ridge;
  return out;
}

DmgpModel build_model(const Eigen::MatrixXd& x, Eigen::Index p_out,
                      int n_layers, Eigen::Index n_inducing,
                      Eigen::Index hidden_width, int k_train, int k_pred,
                      std::uint64_t seed) {
  require(x.rows() >= 1 && x.cols() >= 1, "build_model: empty inputs");
  require(n_layers >= 1, "build_model: need at least one layer");
  require(n_inducing >= 1, "build_model: need at least one inducing point");
  require(k_train >= 1 && k_pred >= 2, "build_model: bad sample counts");

  DmgpModel model;
  model.k_train = k_train;
  model.k_pred = k_pred;
  model.seed = seed;
  Rng rng(derive_seed(seed, "init"));

  const Eigen::Index q = x.cols();
  Eigen::MatrixXd inputs = x;
  Eigen::MatrixXd z = kmeanspp_centers(x, n_inducing, rng);
  for (int l = 0; l < n_layers; ++l) {
    const bool is_final = (l + 1 == n_layers);
    const Eigen::Index dout =
        is_final ? p_out : (hidden_width > 0 ? hidden_width : q);

    const Eigen::RowVectorXd mean = inputs.colwise().mean();
    const Eigen::RowVectorXd var =
        (inputs.rowwise() - mean).array().square().colwise().mean();
    const Eigen::VectorXd ell0 =
        var.array().sqrt().max(1e-3).matrix().transpose();
    const double w0 = std::max(1e-6, 1e-2 * var.mean());

    LayerParams layer =
        make_layer(z, dout, is_final, ell0, is_final ? -1.0 : w0);
    z = layer.mean_function(z);
    inputs = layer.mean_function(inputs);
    model.layers.push_back(std::move(layer));
  }
  model.refresh_cache();
  return model;
}

NoiseDraws draw_noise(const DmgpModel& model, Eigen::Index n, int k,
                      Rng& rng) {
  NoiseDraws noise(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    noise[l].reserve(k);
    for (int kk = 0; kk < k; ++kk)
      noise[l].push_back(rng.normal_matrix(n, model.layers[l].dout()));
  }
  return noise;
}

// ---------------------------------------------------------------------
// Objective graph

namespace {

struct LayerNodes {
  ad::Var z, a_white, p_s, p_sig, log_ell, log_sf, h, b, log_w;
  ad::Var ls_white, lsig, lzz, asol, w;  // shared derived nodes
};

struct BatchProp {
  ad::Var ctil, rt;
};

class ObjectiveGraph {
 public:
  ObjectiveGraph(const DmgpModel& model, const Eigen::MatrixXd& x,
                 const Eigen::MatrixXd& y, int k, const NoiseDraws& noise,
                 double datafit_scale) {
    require(k >= 1, "mco: K must be at least 1");
    require(x.rows() == y.rows(), "mco: X/Y row mismatch");
    require(x.cols() == model.input_dim(), "mco: X dim mismatch");
    require(y.cols() == model.output_dim(), "mco: Y dim mismatch");
    const Eigen::Index n = x.rows();
    const Eigen::Index depth = model.depth();
    require(static_cast<Eigen::Index>(noise.size()) == depth,
            "mco: noise stack depth mismatch");
    for (Eigen::Index l = 0; l < depth; ++l) {
      require(static_cast<int>(noise[l].size()) >= k,
              "mco: not enough noise draws");
      for (int kk = 0; kk < k; ++kk)
        require(noise[l][kk].rows() == n &&
                    noise[l][kk].cols() == model.layers[l].dout(),
                "mco: noise draw shape mismatch");
    }

    // Leaves in registry order, then shared per-layer derived nodes.
    std::vector<LayerNodes> nodes(depth);
    for (Eigen::Index l = 0; l < depth; ++l) {
      const LayerParams& layer = model.layers[l];
      LayerNodes& ln = nodes[l];
      const Eigen::MatrixXd lzz =
          cholesky(layer.kernel.cross(layer.Z, layer.Z)).lower;
      ln.z = tape_.leaf(layer.Z);
      ln.a_white = tape_.leaf(
          solve_lower(lzz, layer.A - layer.mean_function(layer.Z)));
      ln.p_s = tape_.leaf(pack_lower(solve_lower(lzz, layer.Ls)));
      ln.p_sig = tape_.leaf(pack_lower(layer.Lsig));
      ln.log_ell = tape_.leaf(layer.kernel.log_ell);
      ln.log_sf = tape_.leaf(
          Eigen::MatrixXd::Constant(1, 1, layer.kernel.log_sf));
      ln.h = tape_.leaf(layer.H);
      ln.b = tape_.leaf(layer.b);
      leaves_.insert(leaves_.end(), {ln.z, ln.a_white, ln.p_s, ln.p_sig,
                                     ln.log_ell, ln.log_sf, ln.h, ln.b});
      if (!layer.is_final()) {
        ln.log_w = tape_.leaf(layer.W.array().log().matrix());
        leaves_.push_back(ln.log_w);
        ln.w = tape_.exp(ln.log_w);
      }
    }
    ad::Var u_sigy = tape_.leaf(
        Eigen::MatrixXd::Constant(1, 1, std::log(model.sigma_y2)));
    leaves_.push_back(u_sigy);

    ad::Var kl_total;
    for (Eigen::Index l = 0; l < depth; ++l) {
      LayerNodes& ln = nodes[l];
      const Eigen::Index m = model.layers[l].m();
      const Eigen::Index dout = model.layers[l].dout();
      ln.ls_white = tape_.lower_from_packed(ln.p_s, m);
      ln.lsig = tape_.lower_from_packed(ln.p_sig, dout);
      ln.lzz =
          tape_.cholesky(tape_.se_kernel(ln.z, ln.z, ln.log_ell, ln.log_sf));
      ln.asol = tape_.solve_lower_t(ln.lzz, ln.a_white);

      // KL(q(U) || p(U)) with the shared column covariance cancelling.
      // In whitened coordinates the prior is standard: tr(Kzz^-1 S) =
      // tr(S_white) and log|Kzz| - log|S| = -log|S_white|, so Kzz drops
      // out of the divergence entirely.
      ad::Var trks = tape_.frob2(ln.ls_white);
      ad::Var logdets = tape_.scale(tape_.logdet_chol(ln.ls_white), -1.0);
      ad::Var mahal = tape_.frob2(
          tape_.solve_lower(ln.lsig, tape_.transpose(ln.a_white)));
      ad::Var kl = tape_.scale(
          tape_.add(tape_.add(tape_.scale(trks, double(dout)),
                              tape_.scale(logdets, double(dout))),
                    tape_.add_scalar(mahal, -double(m * dout))),
          0.5);
      kl_total = kl_total ? tape_.add(kl_total, kl) : kl;
    }

    auto prop_batch = [&](const ad::Var& f_prev,
                          Eigen::Index l) -> BatchProp {
      LayerNodes& ln = nodes[l];
      ad::Var kxz = tape_.se_kernel(f_prev, ln.z, ln.log_ell, ln.log_sf);
      ad::Var t1 = tape_.solve_lower(ln.lzz, tape_.transpose(kxz));
      ad::Var q1 = tape_.sqnorm_cols(t1);
      // k Kzz^-1 S Kzz^-1 k' = t1' S_white t1 with t1 = Lzz^-1 k'.
      ad::Var q2 =
          tape_.sqnorm_cols(tape_.matmul(tape_.transpose(ln.ls_white), t1));
      ad::Var sf2n = tape_.broadcast_scalar(
          tape_.exp(tape_.scale(ln.log_sf, 2.0)), f_prev->val.rows());
      ad::Var rt = tape_.clamp_min0(tape_.add(tape_.sub(sf2n, q1), q2));
      ad::Var ctil = tape_.add(
          tape_.broadcast_add_row(tape_.matmul(f_prev, ln.h), ln.b),
          tape_.matmul(kxz, ln.asol));
      return {ctil, rt};
    };

    ad::Var xc = tape_.constant(x);
    // Layer 1 sees the same fixed input for every sample, so its
    // propagation is built once and only the draws differ.
    const BatchProp first = prop_batch(xc, 0);
    std::vector<ad::Var> f(k);
    for (int kk = 0; kk < k; ++kk)
      f[kk] = tape_.mvn_sample_rows(first.ctil, first.rt, nodes[0].lsig,
                                    nodes[0].w, noise[0][kk]);
    for (Eigen::Index l = 1; l < depth; ++l)
      for (int kk = 0; kk < k; ++kk) {
        const BatchProp pr = prop_batch(f[kk], l);
        f[kk] = tape_.mvn_sample_rows(pr.ctil, pr.rt, nodes[l].lsig,
                                      nodes[l].w, noise[l][kk]);
      }

    ad::Var sigma2 = tape_.exp(u_sigy);
    std::vector<ad::Var> cols(k);
    for (int kk = 0; kk < k; ++kk)
      cols[kk] = tape_.iso_gauss_rows(y, f[kk], sigma2);
    ad::Var lme = tape_.logmeanexp_rows(tape_.hstack(cols));
    per_datum_ = lme->val.col(0);
    ad::Var datafit = tape_.sum(lme);
    if (datafit_scale != 1.0) datafit = tape_.scale(datafit, datafit_scale);
    obj_ = tape_.sub(datafit, kl_total);
  }

  double value() const { return obj_->val(0, 0); }
  const Eigen::VectorXd& per_datum() const { return per_datum_; }

  Eigen::VectorXd gradient() {
    tape_.backward(obj_);
    Eigen::Index total = 0;
    for (const ad::Var& v : leaves_) total += v->val.size();
    Eigen::VectorXd g(total);
    Eigen::Index off = 0;
    for (const ad::Var& v : leaves_) {
      g.segment(off, v->val.size()) =
          Eigen::Map<const Eigen::VectorXd>(v->grad.data(), v->grad.size());
      off += v->val.size();
    }
    return g;
  }

 private:
  ad::Tape tape_;
  std::vector<ad::Var> leaves_;
  ad::Var obj_;
  Eigen::VectorXd per_datum_;
};

void check_finite(const ObjectiveGraph& graph) {
  const Eigen::VectorXd& pd = graph.per_datum();
  for (Eigen::Index i = 0; i < pd.size(); ++i)
    if (!std::isfinite(pd[i])) {
      std::ostringstream msg;
      msg << "mco: non-finite objective contribution at datum " << i;
      throw std::runtime_error(msg.str());
    }
  if (!std::isfinite(graph.value()))
    throw std::runtime_error("mco: non-finite objective (KL term)");
}

}  // namespace

double mco(const DmgpModel& model, const Eigen::MatrixXd& x,
           const Eigen::MatrixXd& y, int k, const NoiseDraws& noise) {
  ObjectiveGraph graph(model, x, y, k, noise, 1.0);
  check_finite(graph);
  return graph.value();
}

std::pair<double, Eigen::VectorXd> mco_gradient(const DmgpModel& model,
                                                const Eigen::MatrixXd& x,
                                                const Eigen::MatrixXd& y,
                                                int k,
                                                const NoiseDraws& noise) {
  ObjectiveGraph graph(model, x, y, k, noise, 1.0);
  check_finite(graph);
  return {graph.value(), graph.gradient()};
}

TrainResult train(DmgpModel& model, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& y, const TrainConfig& cfg) {
  require(x.rows() >= 2, "train: need at least two data points");
  require(x.allFinite() && y.allFinite(), "train: data must be finite");
  require(cfg.adam.step > 0, "train: step size must be positive");
  require(cfg.adam.beta1 >= 0 && cfg.adam.beta1 < 1 && cfg.adam.beta2 >= 0 &&
              cfg.adam.beta2 < 1,
          "train: Adam betas must lie in [0, 1)");

  const Eigen::Index n = x.rows();
  const int k = model.k_train;
  Rng rng(derive_seed(model.seed, "train"));

  TrainResult result;
  Eigen::VectorXd theta = model.pack();
  Eigen::VectorXd last_finite = theta;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
  std::vector<Eigen::Index> index(n);
  for (Eigen::Index i = 0; i < n; ++i) index[i] = i;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    const Eigen::MatrixXd* xb = &x;
    const Eigen::MatrixXd* yb = &y;
    Eigen::MatrixXd xs, ys;
    double scale = 1.0;
    if (cfg.minibatch_size > 0 && cfg.minibatch_size < n) {
      const Eigen::Index bsz = cfg.minibatch_size;
      for (Eigen::Index i = 0; i < bsz; ++i) {
        const Eigen::Index j =
            i + static_cast<Eigen::Index>(rng.uniform_int(n - i));
        std::swap(index[i], index[j]);
      }
      xs.resize(bsz, x.cols());
      ys.resize(bsz, y.cols());
      for (Eigen::Index i = 0; i < bsz; ++i) {
        xs.row(i) = x.row(index[i]);
        ys.row(i) = y.row(index[i]);
      }
      xb = &xs;
      yb = &ys;
      scale = double(n) / double(bsz);
    }

    const NoiseDraws noise = draw_noise(model, xb->rows(), k, rng);
    double val;
    Eigen::VectorXd grad;
    try {
      ObjectiveGraph graph(model, *xb, *yb, k, noise, scale);
      check_finite(graph);
      val = graph.value();
      grad = graph.gradient();
    } catch (const std::runtime_error&) {
      result.diverged = true;
      break;
    }
    if (!grad.allFinite()) {
      result.diverged = true;
      break;
    }
    result.trace.push_back(val);
    last_finite = theta;

    if (cfg.gradient_check_period > 0 && scale == 1.0 &&
        it % cfg.gradient_check_period == 0) {
      // Spot-check one coordinate against central differences on the
      // same draws.
      const Eigen::Index i =
          static_cast<Eigen::Index>((7919LL * (it + 1)) % theta.size());
      const double h = 1e-5;
      DmgpModel probe = model;
      Eigen::VectorXd tp = theta;
      tp[i] += h;
      probe.unpack(tp);
      const double fp = mco(probe, *xb, *yb, k, noise);
      tp[i] -= 2 * h;
      probe.unpack(tp);
      const double fm = mco(probe, *xb, *yb, k, noise);
      const double fd = (fp - fm) / (2 * h);
      const double rel =
          std::abs(fd - grad[i]) / std::max({1.0, std::abs(fd)});
      result.worst_gradient_check =
          std::max(result.worst_gradient_check, rel);
    }

    // Adam ascent step.
    m1 = cfg.adam.beta1 * m1 + (1 - cfg.adam.beta1) * grad;
    m2 = cfg.adam.beta2 * m2 +
         (1 - cfg.adam.beta2) * grad.array().square().matrix();
    const double c1 = 1 - std::pow(cfg.adam.beta1, it + 1);
    const double c2 = 1 - std::pow(cfg.adam.beta2, it + 1);
    theta.array() += cfg.adam.step * (m1.array() / c1) /
                     ((m2.array() / c2).sqrt() + cfg.adam.epsilon);
    try {
      model.unpack(theta);
    } catch (const NotPositiveDefinite&) {
      // The step left the representable region (unpack rebuilds the
      // constrained factors and can reject a blown-up Kzz).
      result.diverged = true;
      break;
    }
  }

  if (result.diverged) model.unpack(last_finite);
  model.refresh_cache();
  return result;
}

}  // namespace dmgp
