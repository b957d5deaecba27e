#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmgp/layer.hpp"
#include "dmgp/rng.hpp"

namespace dmgp {

struct AdamConfig {
  double step = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int max_iterations = 3000;
  AdamConfig adam;
  int minibatch_size = 0;        // 0 disables minibatching (full batch)
  int gradient_check_period = 0; // 0 disables periodic FD spot checks
};

struct TrainResult {
  std::vector<double> trace;  // objective value per iteration
  bool diverged = false;
  double worst_gradient_check = 0.0;  // only filled when spot checks run
};

struct PredictiveGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// One contiguous slice of the unconstrained parameter vector.
struct ParamBlock {
  enum class Role {
    inducing,          // Z
    variational_mean,  // A
    covariance,        // packed factors of S and Sigma
    kernel,            // log lengthscales, log signal std
    mean,              // H, b
    noise,             // log W
    likelihood         // log observation variance
  };
  std::string name;
  Role role;
  int layer;  // -1 for global blocks
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
  Eigen::Index matrix_entries = 0;  // entries of the represented matrix
};

// Per-layer, per-sample standard normal draws: noise[l][k] is N x Dout_l.
using NoiseDraws = std::vector<std::vector<Eigen::MatrixXd>>;

class DmgpModel {
 public:
  std::vector<LayerParams> layers;
  double sigma_y2 = 1e-2;  // likelihood variance, trainable
  int k_train = 10;
  int k_pred = 50;
  std::uint64_t seed = 0;

  Eigen::Index input_dim() const { return layers.front().din(); }
  Eigen::Index output_dim() const { return layers.back().dout(); }
  Eigen::Index depth() const { return static_cast<Eigen::Index>(layers.size()); }

  // Layout of the unconstrained parameter vector; pack/unpack round-trip.
  std::vector<ParamBlock> registry() const;
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& theta);
  // Entries of the SPD matrices represented by covariance blocks,
  // sum over layers of (M^2 + Dout^2).
  Eigen::Index covariance_entry_count() const;

  // Recursive propagate-and-sample; noise_stack has one Dout_l vector per
  // layer.  The final layer is sampled without observation noise.
  Eigen::VectorXd forward_sample(const Eigen::VectorXd& x,
                                 const std::vector<Eigen::VectorXd>&
                                     noise_stack) const;

  // Sample mean and regularized sample covariance over k_pred forward
  // draws; the draw stream is a fixed function of the model seed, so
  // repeated calls are identical.
  PredictiveGaussian predict(const Eigen::VectorXd& x) const;

  // Rebuild the per-layer factorization caches; call after any direct
  // parameter mutation.  train/load do this automatically.
  void refresh_cache();
  bool cache_valid() const { return cache_valid_; }

 private:
  friend class ObjectiveGraph;
  std::vector<LayerCache> cache_;
  bool cache_valid_ = false;
};

// Near-identity initialized stack: inducing inputs from k-means++ on the
// training inputs, deeper layers on the mean-function image of those
// centers.  hidden_width = 0 keeps each hidden layer at the input width.
DmgpModel build_model(const Eigen::MatrixXd& x, Eigen::Index p_out,
                      int n_layers, Eigen::Index n_inducing,
                      Eigen::Index hidden_width, int k_train, int k_pred,
                      std::uint64_t seed);

NoiseDraws draw_noise(const DmgpModel& model, Eigen::Index n, int k,
                      Rng& rng);

// Monte Carlo objective (importance-weighted bound):
//   sum_n log( (1/K) sum_k p(y_n | f_{n,k}^L) ) - sum_l KL_l
// evaluated on externally supplied draws.  K = 1 gives the ELBO.
double mco(const DmgpModel& model, const Eigen::MatrixXd& x,
           const Eigen::MatrixXd& y, int k, const NoiseDraws& noise);

// Objective value and its gradient over the unconstrained parameter
// vector (same layout as pack()).
std::pair<double, Eigen::VectorXd> mco_gradient(const DmgpModel& model,
                                                const Eigen::MatrixXd& x,
                                                const Eigen::MatrixXd& y,
                                                int k,
                                                const NoiseDraws& noise);

// Adam ascent on the objective; on divergence restores the last finite
// parameters and returns with diverged = true.
TrainResult train(DmgpModel& model, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& y, const TrainConfig& cfg);

}  // namespace dmgp
