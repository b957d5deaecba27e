#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "dmgp/cholesky.hpp"

namespace dmgp::ad {

// Reverse-mode tape over Eigen matrices.  Ops evaluate eagerly and record
// a backward closure; Tape::backward replays them in reverse creation
// order.  Scalars are 1x1 matrices, column vectors n x 1.
struct Node {
  Eigen::MatrixXd val;
  Eigen::MatrixXd grad;        // allocated and zeroed by Tape::backward
  std::function<void()> back;  // pulls this->grad into parents' grads
  bool needs_grad = false;
};

using Var = std::shared_ptr<Node>;

inline void accumulate(const Var& p, const Eigen::MatrixXd& g) {
  if (p->needs_grad) p->grad += g;
}

class Tape {
 public:
  Var leaf(Eigen::MatrixXd v);      // differentiable input
  Var constant(Eigen::MatrixXd v);  // data, no gradient

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_scalar(Var a, double c);
  Var scale(Var a, double c);
  Var exp(Var a);
  Var transpose(Var a);
  Var matmul(Var a, Var b);
  Var broadcast_add_row(Var a, Var row);           // (n x d) + (1 x d)
  Var broadcast_scalar(Var s, Eigen::Index rows);  // 1x1 -> rows x 1
  Var hstack(const std::vector<Var>& cols);        // k columns n x 1 -> n x k
  Var sum(Var a);                                  // 1x1
  Var frob2(Var a);                                // sum of squares, 1x1
  Var sqnorm_cols(Var a);                          // (m x n) -> n x 1
  Var clamp_min0(Var a);

  Var cholesky(Var a,
               const std::vector<double>& jitter = default_jitter_schedule());
  Var solve_lower(Var l, Var b);    // L^-1 B
  Var solve_lower_t(Var l, Var b);  // L^-T B
  Var logdet_chol(Var l);           // log|L L^T|, 1x1
  // Unconstrained packed storage of a lower-triangular factor: column-major
  // lower triangle, diagonal passed through std::exp to stay positive.
  Var lower_from_packed(Var packed, Eigen::Index n);

  // Fused ARD SE kernel block k(X, Z); gradients flow to all four inputs.
  // Pass the same Var for x and z to build a Gram matrix.
  Var se_kernel(Var x, Var z, Var log_ell, Var log_sf);

  // Row-wise reparameterized draws: row n of the result is
  //   ctil_n + chol(rt_n * Lsig Lsig^T + diag(w)) * eps_n
  // with w optional (pass nullptr for the final, noise-free layer).
  Var mvn_sample_rows(Var ctil, Var rt, Var lsig, Var w,
                      const Eigen::MatrixXd& eps);

  // Row-wise isotropic Gaussian log density log N(y_n; f_n, sigma2 I).
  Var iso_gauss_rows(const Eigen::MatrixXd& y, Var f, Var sigma2);

  // Row-wise log of the mean of exponentials; backward distributes the
  // per-row softmax (the normalized importance weights).
  Var logmeanexp_rows(Var a);

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse; root must be
  // 1x1.  Leaf gradients are left in node->grad.
  void backward(const Var& root);

  std::size_t size() const { return order_.size(); }

 private:
  Var make(Eigen::MatrixXd v, std::vector<Var> parents,
           std::function<void()> back);
  std::vector<Var> order_;
};

}  // namespace dmgp::ad
