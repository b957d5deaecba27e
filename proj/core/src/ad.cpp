#include "dmgp/ad.hpp"

#include <cmath>
#include <utility>

#include "dmgp/errors.hpp"
#include "dmgp/kernel.hpp"

namespace dmgp::ad {

namespace {

// Reverse-mode rule for A = L L^T (Murray's formulation): given Lbar,
//   Abar = 1/2 L^-T (P + P^T) L^-1  with  P = tril(L^T Lbar), diag halved.
Eigen::MatrixXd chol_pullback(const Eigen::MatrixXd& l,
                              const Eigen::MatrixXd& lbar) {
  Eigen::MatrixXd lt_lbar = l.transpose() * lbar;
  Eigen::MatrixXd p = lt_lbar.triangularView<Eigen::Lower>().toDenseMatrix();
  p.diagonal() *= 0.5;
  const Eigen::MatrixXd s = p + p.transpose();
  const Eigen::MatrixXd x =
      l.transpose().triangularView<Eigen::Upper>().solve(s);
  const Eigen::MatrixXd y = l.transpose()
                                .triangularView<Eigen::Upper>()
                                .solve(x.transpose())
                                .transpose();
  return 0.5 * y;
}

Eigen::MatrixXd tril(const Eigen::MatrixXd& m) {
  return m.triangularView<Eigen::Lower>().toDenseMatrix();
}

}  // namespace

Var Tape::make(Eigen::MatrixXd v, std::vector<Var> parents,
               std::function<void()> back) {
  auto node = std::make_shared<Node>();
  node->val = std::move(v);
  for (const Var& p : parents)
    if (p && p->needs_grad) node->needs_grad = true;
  if (node->needs_grad) node->back = std::move(back);
  order_.push_back(node);
  return node;
}

Var Tape::leaf(Eigen::MatrixXd v) {
  auto node = std::make_shared<Node>();
  node->val = std::move(v);
  node->needs_grad = true;
  order_.push_back(node);
  return node;
}

Var Tape::constant(Eigen::MatrixXd v) {
  auto node = std::make_shared<Node>();
  node->val = std::move(v);
  order_.push_back(node);
  return node;
}

Var Tape::add(Var a, Var b) {
  require(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(),
          "ad::add shape mismatch");
  Var out = make(a->val + b->val, {a, b}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, b, self]() {
      accumulate(a, self->grad);
      accumulate(b, self->grad);
    };
  }
  return out;
}

Var Tape::sub(Var a, Var b) {
  require(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(),
          "ad::sub shape mismatch");
  Var out = make(a->val - b->val, {a, b}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, b, self]() {
      accumulate(a, self->grad);
      accumulate(b, -self->grad);
    };
  }
  return out;
}

Var Tape::add_scalar(Var a, double c) {
  Var out = make(a->val.array() + c, {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() { accumulate(a, self->grad); };
  }
  return out;
}

Var Tape::scale(Var a, double c) {
  Var out = make(c * a->val, {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, c, self]() { accumulate(a, c * self->grad); };
  }
  return out;
}

Var Tape::exp(Var a) {
  Var out = make(a->val.array().exp(), {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() {
      accumulate(a, self->grad.cwiseProduct(self->val));
    };
  }
  return out;
}

Var Tape::transpose(Var a) {
  Var out = make(a->val.transpose(), {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() { accumulate(a, self->grad.transpose()); };
  }
  return out;
}

Var Tape::matmul(Var a, Var b) {
  require(a->val.cols() == b->val.rows(), "ad::matmul shape mismatch");
  Var out = make(a->val * b->val, {a, b}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, b, self]() {
      if (a->needs_grad) a->grad += self->grad * b->val.transpose();
      if (b->needs_grad) b->grad += a->val.transpose() * self->grad;
    };
  }
  return out;
}

Var Tape::broadcast_add_row(Var a, Var row) {
  require(row->val.rows() == 1 && row->val.cols() == a->val.cols(),
          "ad::broadcast_add_row expects a 1 x d row");
  Eigen::MatrixXd v = a->val;
  v.rowwise() += row->val.row(0);
  Var out = make(std::move(v), {a, row}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, row, self]() {
      accumulate(a, self->grad);
      accumulate(row, self->grad.colwise().sum());
    };
  }
  return out;
}

Var Tape::broadcast_scalar(Var s, Eigen::Index rows) {
  require(s->val.size() == 1, "ad::broadcast_scalar expects 1x1 input");
  Var out = make(Eigen::MatrixXd::Constant(rows, 1, s->val(0, 0)), {s},
                 nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [s, self]() {
      s->grad(0, 0) += self->grad.sum();
    };
  }
  return out;
}

Var Tape::hstack(const std::vector<Var>& cols) {
  require(!cols.empty(), "ad::hstack needs at least one column");
  const Eigen::Index n = cols.front()->val.rows();
  Eigen::MatrixXd v(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    require(cols[k]->val.rows() == n && cols[k]->val.cols() == 1,
            "ad::hstack expects n x 1 columns");
    v.col(static_cast<Eigen::Index>(k)) = cols[k]->val;
  }
  Var out = make(std::move(v), cols, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    auto parents = cols;
    out->back = [parents, self]() {
      for (std::size_t k = 0; k < parents.size(); ++k)
        accumulate(parents[k],
                   self->grad.col(static_cast<Eigen::Index>(k)));
    };
  }
  return out;
}

Var Tape::sum(Var a) {
  Var out =
      make(Eigen::MatrixXd::Constant(1, 1, a->val.sum()), {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() {
      a->grad.array() += self->grad(0, 0);
    };
  }
  return out;
}

Var Tape::frob2(Var a) {
  Var out = make(Eigen::MatrixXd::Constant(1, 1, a->val.squaredNorm()), {a},
                 nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() {
      accumulate(a, 2.0 * self->grad(0, 0) * a->val);
    };
  }
  return out;
}

Var Tape::sqnorm_cols(Var a) {
  Var out = make(a->val.colwise().squaredNorm().transpose(), {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() {
      accumulate(a, 2.0 * a->val * self->grad.col(0).asDiagonal());
    };
  }
  return out;
}

Var Tape::clamp_min0(Var a) {
  Var out = make(a->val.cwiseMax(0.0), {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() {
      accumulate(
          a, (a->val.array() > 0.0).select(self->grad, 0.0).matrix());
    };
  }
  return out;
}

Var Tape::cholesky(Var a, const std::vector<double>& jitter) {
  const CholeskyFactor f = dmgp::cholesky(a->val, jitter);
  Var out = make(f.lower, {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, self]() {
      accumulate(a, chol_pullback(self->val, self->grad));
    };
  }
  return out;
}

Var Tape::solve_lower(Var l, Var b) {
  require(l->val.rows() == l->val.cols() && l->val.rows() == b->val.rows(),
          "ad::solve_lower shape mismatch");
  Var out =
      make(l->val.triangularView<Eigen::Lower>().solve(b->val), {l, b},
           nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [l, b, self]() {
      const Eigen::MatrixXd gb =
          l->val.transpose().triangularView<Eigen::Upper>().solve(self->grad);
      accumulate(b, gb);
      if (l->needs_grad)
        l->grad -= tril(gb * self->val.transpose());
    };
  }
  return out;
}

Var Tape::solve_lower_t(Var l, Var b) {
  require(l->val.rows() == l->val.cols() && l->val.rows() == b->val.rows(),
          "ad::solve_lower_t shape mismatch");
  Var out = make(
      l->val.transpose().triangularView<Eigen::Upper>().solve(b->val), {l, b},
      nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [l, b, self]() {
      const Eigen::MatrixXd gb =
          l->val.triangularView<Eigen::Lower>().solve(self->grad);
      accumulate(b, gb);
      if (l->needs_grad)
        l->grad -= tril(self->val * gb.transpose());
    };
  }
  return out;
}

Var Tape::logdet_chol(Var l) {
  const double ld = 2.0 * l->val.diagonal().array().log().sum();
  Var out = make(Eigen::MatrixXd::Constant(1, 1, ld), {l}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [l, self]() {
      l->grad.diagonal() +=
          (2.0 * self->grad(0, 0)) * l->val.diagonal().cwiseInverse();
    };
  }
  return out;
}

Var Tape::lower_from_packed(Var packed, Eigen::Index n) {
  require(packed->val.cols() == 1 &&
              packed->val.rows() == n * (n + 1) / 2,
          "ad::lower_from_packed: packed length must be n(n+1)/2");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i, ++k)
      l(i, j) = (i == j) ? std::exp(packed->val(k, 0)) : packed->val(k, 0);
  Var out = make(std::move(l), {packed}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [packed, n, self]() {
      Eigen::Index k = 0;
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j; i < n; ++i, ++k)
          packed->grad(k, 0) += (i == j)
                                    ? self->grad(i, j) * self->val(i, j)
                                    : self->grad(i, j);
    };
  }
  return out;
}

Var Tape::se_kernel(Var x, Var z, Var log_ell, Var log_sf) {
  require(x->val.cols() == z->val.cols(),
          "ad::se_kernel inputs must share dimensionality");
  require(log_ell->val.cols() == 1 && log_ell->val.rows() == x->val.cols(),
          "ad::se_kernel lengthscale count must match input dim");
  require(log_sf->val.size() == 1, "ad::se_kernel log_sf must be scalar");
  const Eigen::VectorXd ell = log_ell->val.col(0).array().exp();
  const double sf2 = std::exp(2.0 * log_sf->val(0, 0));
  const Eigen::MatrixXd d2 = scaled_sq_dist(x->val, z->val, ell);
  Var out = make(sf2 * (-0.5 * d2).array().exp(), {x, z, log_ell, log_sf},
                 nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [x, z, log_ell, log_sf, ell, self]() {
      const Eigen::MatrixXd w = self->grad.cwiseProduct(self->val);
      const Eigen::VectorXd inv_ell2 =
          ell.array().square().inverse().matrix();
      if (log_sf->needs_grad) log_sf->grad(0, 0) += 2.0 * w.sum();
      const Eigen::VectorXd rw = w.rowwise().sum();
      const Eigen::VectorXd cw = w.colwise().sum().transpose();
      const Eigen::MatrixXd wz = w * z->val;
      if (x->needs_grad)
        x->grad -= (rw.asDiagonal() * x->val - wz) * inv_ell2.asDiagonal();
      if (z->needs_grad)
        z->grad -= (cw.asDiagonal() * z->val - w.transpose() * x->val) *
                   inv_ell2.asDiagonal();
      if (log_ell->needs_grad) {
        const Eigen::VectorXd t1 =
            (x->val.array().square().colwise() * rw.array())
                .colwise()
                .sum()
                .transpose();
        const Eigen::VectorXd t2 =
            (z->val.array().square().colwise() * cw.array())
                .colwise()
                .sum()
                .transpose();
        const Eigen::VectorXd cross =
            (x->val.array() * wz.array()).colwise().sum().transpose();
        log_ell->grad.col(0) +=
            ((t1 - 2.0 * cross + t2).array() * inv_ell2.array()).matrix();
      }
    };
  }
  return out;
}

Var Tape::mvn_sample_rows(Var ctil, Var rt, Var lsig, Var w,
                          const Eigen::MatrixXd& eps) {
  const Eigen::Index n = ctil->val.rows();
  const Eigen::Index d = ctil->val.cols();
  require(rt->val.rows() == n && rt->val.cols() == 1,
          "ad::mvn_sample_rows: rt must be n x 1");
  require(lsig->val.rows() == d && lsig->val.cols() == d,
          "ad::mvn_sample_rows: lsig must be d x d");
  require(eps.rows() == n && eps.cols() == d,
          "ad::mvn_sample_rows: eps must be n x d");
  const bool has_w = static_cast<bool>(w);
  if (has_w)
    require(w->val.rows() == d && w->val.cols() == 1,
            "ad::mvn_sample_rows: w must be d x 1");

  const Eigen::MatrixXd sigma = lsig->val * lsig->val.transpose();
  auto chols = std::make_shared<std::vector<Eigen::MatrixXd>>();
  chols->reserve(static_cast<std::size_t>(n));
  Eigen::MatrixXd f(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::MatrixXd c = rt->val(i, 0) * sigma;
    if (has_w) c.diagonal() += w->val.col(0);
    const CholeskyFactor fac = dmgp::cholesky(c);
    chols->push_back(fac.lower);
    f.row(i) = ctil->val.row(i) +
               (fac.lower * eps.row(i).transpose()).transpose();
  }

  std::vector<Var> parents = {ctil, rt, lsig};
  if (has_w) parents.push_back(w);
  Var out = make(std::move(f), parents, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [ctil, rt, lsig, w, has_w, eps, sigma, chols, n, d, self]() {
      accumulate(ctil, self->grad);
      Eigen::MatrixXd sig_bar = Eigen::MatrixXd::Zero(d, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd g = self->grad.row(i).transpose();
        const Eigen::MatrixXd lbar =
            tril(g * eps.row(i));  // d x d outer product, lower part
        const Eigen::MatrixXd cbar = chol_pullback((*chols)[static_cast<
            std::size_t>(i)], lbar);
        if (rt->needs_grad)
          rt->grad(i, 0) += cbar.cwiseProduct(sigma).sum();
        sig_bar += rt->val(i, 0) * cbar;
        if (has_w && w->needs_grad) w->grad.col(0) += cbar.diagonal();
      }
      if (lsig->needs_grad)
        lsig->grad += tril((sig_bar + sig_bar.transpose()) * lsig->val);
    };
  }
  return out;
}

Var Tape::iso_gauss_rows(const Eigen::MatrixXd& y, Var f, Var sigma2) {
  require(y.rows() == f->val.rows() && y.cols() == f->val.cols(),
          "ad::iso_gauss_rows: y/f shape mismatch");
  require(sigma2->val.size() == 1,
          "ad::iso_gauss_rows: sigma2 must be scalar");
  const double s2 = sigma2->val(0, 0);
  require(s2 > 0.0, "ad::iso_gauss_rows: sigma2 must be positive");
  const double p = static_cast<double>(y.cols());
  const double log2pi = 1.8378770664093454835606594728112;
  const Eigen::VectorXd sq = (y - f->val).rowwise().squaredNorm();
  Eigen::MatrixXd v =
      (-0.5 * p * (log2pi + std::log(s2)) - (0.5 / s2) * sq.array())
          .matrix();
  Var out = make(std::move(v), {f, sigma2}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [y, f, sigma2, s2, p, sq, self]() {
      const Eigen::VectorXd g = self->grad.col(0);
      if (f->needs_grad)
        f->grad += (1.0 / s2) * g.asDiagonal() * (y - f->val);
      if (sigma2->needs_grad)
        sigma2->grad(0, 0) +=
            (g.array() *
             (-0.5 * p / s2 + sq.array() * (0.5 / (s2 * s2))))
                .sum();
    };
  }
  return out;
}

Var Tape::logmeanexp_rows(Var a) {
  const Eigen::Index n = a->val.rows();
  const double logk = std::log(static_cast<double>(a->val.cols()));
  const Eigen::VectorXd m = a->val.rowwise().maxCoeff();
  const Eigen::VectorXd se =
      (a->val.colwise() - m).array().exp().rowwise().sum();
  Eigen::MatrixXd v(n, 1);
  v.col(0) = m.array() + se.array().log() - logk;
  Var out = make(std::move(v), {a}, nullptr);
  if (out->needs_grad) {
    Node* self = out.get();
    out->back = [a, m, se, self]() {
      // Softmax over each row: these are the importance weights.
      const Eigen::MatrixXd soft =
          ((a->val.colwise() - m).array().exp().colwise() /
           se.array())
              .matrix();
      accumulate(a, self->grad.col(0).asDiagonal() * soft);
    };
  }
  return out;
}

void Tape::backward(const Var& root) {
  require(root->val.size() == 1, "ad::backward: root must be scalar");
  if (!root->needs_grad) return;
  for (const Var& n : order_)
    if (n->needs_grad)
      n->grad = Eigen::MatrixXd::Zero(n->val.rows(), n->val.cols());
  root->grad(0, 0) = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = it->get();
    if (n->needs_grad && n->back && n->grad.squaredNorm() != 0.0) n->back();
  }
}

}  // namespace dmgp::ad
