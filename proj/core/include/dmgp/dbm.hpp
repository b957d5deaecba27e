#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dmgp/airflow.hpp"
#include "dmgp/building.hpp"
#include "dmgp/transport.hpp"

namespace dmgp {

// Bias-free two-layer Boltzmann machine with a linear readout head.  A
// joint configuration (v, h1, h2) of binary units carries energy
// -v'W1 h1 - h1'W2 h2; the readout turns the deepest hidden activation
// into one score per candidate zone.
struct DbmParams {
  Eigen::MatrixXd W1;       // visible x hidden1
  Eigen::MatrixXd W2;       // hidden1 x hidden2
  Eigen::MatrixXd readout;  // hidden2 x zones
};

// Fully factorized posterior over the hidden units for one visible
// vector.  Entries stay strictly inside (0, 1).
struct MeanFieldState {
  Eigen::VectorXd mu1, mu2;
  std::vector<double> residuals;  // largest applied change, per sweep
  double residual = 0;            // final sweep
  int iterations = 0;
};

// Damped fixed-point iteration of the two consistency equations
//   mu1 = sigmoid(W1'v + W2 mu2),  mu2 = sigmoid(W2'mu1)
// from the uninformative start mu = 1/2, stopping once the largest
// applied change in a sweep drops below tol.  damping is the weight kept
// on the previous state (0 = undamped).
MeanFieldState mean_field_infer(const DbmParams& params,
                                const Eigen::VectorXd& v, int iters = 200,
                                double tol = 1e-10, double damping = 0.5);

// Raise every entry to at least eps, then renormalize.  Keeps remote
// possibilities alive without reordering any entries above the floor.
Eigen::VectorXd floor_probabilities(const Eigen::VectorXd& p, double eps);

// Zone distribution served to the sampler: softmax of the readout on the
// mean-field deep activation, floored at eps so no zone is ever ruled
// out outright.
Eigen::VectorXd zone_prior(const DbmParams& params, const Eigen::VectorXd& v,
                           double eps = 0.01);

// How raw sensor series become the binary visible vector: one indicator
// per (sensor, read time), set when the reading exceeds that sensor's
// alarm level.  Layout is sensor-major, time within sensor.
struct ActivationConfig {
  Eigen::VectorXd times;       // read times, s
  Eigen::VectorXd thresholds;  // alarm level per sensor, g/m^3
};

Eigen::VectorXd activation_pattern(const std::vector<SensorRecord>& sensors,
                                   const ActivationConfig& cfg);

// Labelled activation patterns for training the zone classifier.
struct DbmDataset {
  std::vector<std::string> zone_ids;  // class order, readout columns
  ActivationConfig features;
  Eigen::MatrixXd v;       // examples x visible, binary
  Eigen::VectorXi labels;  // class index per example
  Eigen::VectorXd noise_sd;  // sensor noise used to synthesize the data
};

// Simulates per_zone single-source scenarios in every listed zone (Latin
// hypercube over the floor rectangle), senses them with noise at
// noise_fraction of each sensor's peak, and binarizes the reads up to
// `horizon` against alarm levels at threshold_fraction of the peak.
DbmDataset make_activation_dataset(const BuildingModel& bldg,
                                   const AirflowSolution& airflow,
                                   const std::vector<int>& zones,
                                   int per_zone, std::uint64_t seed,
                                   double threshold_fraction = 0.02,
                                   double noise_fraction = 0.01,
                                   double horizon = 360.0);

struct DbmTrainConfig {
  int hidden1 = 64;
  int hidden2 = 32;
  int pretrain_epochs = 100;     // contrastive-divergence sweeps per layer
  double pretrain_step = 0.05;
  int readout_iterations = 400;  // supervised head fit
  double readout_step = 0.1;
  double holdout_fraction = 0.2;
  double min_holdout_accuracy = 0.95;
  int mean_field_iters = 200;
  double mean_field_tol = 1e-10;
  double damping = 0.5;
  std::uint64_t seed = 0;
};

struct DbmTrainResult {
  double train_accuracy = 0;
  double holdout_accuracy = 0;
  // Set when the accuracy contract is missed; the parameters are still
  // returned and usable, this is a warning, not a failure.
  bool low_accuracy = false;
  std::vector<double> readout_trace;  // mean log-likelihood per iteration
};

// Layerwise pretraining with one-step contrastive divergence, then a
// supervised fit of the readout on the mean-field deep activations.
// Requires at least ten examples per zone.  Accuracy is measured on a
// stratified holdout (on the training rows when holdout_fraction is 0).
DbmParams train_dbm(const DbmDataset& data, const DbmTrainConfig& cfg,
                    DbmTrainResult* result = nullptr);

enum class PriorBackend { deep, logistic };

// Deployable classifier: the trained weights plus everything needed to
// featurize raw sensor series.  The logistic backend scores v directly
// with `linear` (visible x zones); it ships as a plain convex fallback
// behind the same interface.
struct ZonePriorModel {
  PriorBackend backend = PriorBackend::deep;
  DbmParams params;
  Eigen::MatrixXd linear;
  std::vector<std::string> zone_ids;
  ActivationConfig features;
  double holdout_accuracy = 0;
  bool low_accuracy = false;
};

ZonePriorModel train_zone_prior_model(const DbmDataset& data,
                                      const DbmTrainConfig& cfg,
                                      PriorBackend backend =
                                          PriorBackend::deep,
                                      DbmTrainResult* result = nullptr);

Eigen::VectorXd zone_prior(const ZonePriorModel& model,
                           const std::vector<SensorRecord>& sensors,
                           double eps = 0.01);

inline constexpr int kZonePriorSchemaVersion = 1;

void save_zone_prior(const ZonePriorModel& model, const std::string& path);
ZonePriorModel load_zone_prior(const std::string& path);

}  // namespace dmgp
