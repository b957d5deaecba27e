#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "dmgp/building.hpp"
#include "dmgp/model.hpp"
#include "dmgp/transport.hpp"

namespace dmgp {

// One emulator per (source zone, source count, sensor) combination; all
// indices reference the building's zone list.
struct EmulatorKey {
  int zone = 0;
  int count = 0;
  int sensor = 0;
};

bool operator<(const EmulatorKey& a, const EmulatorKey& b);
bool operator==(const EmulatorKey& a, const EmulatorKey& b);

struct EmulatorConfig {
  // Zones to emulate (ids); empty selects every interior zone.
  std::vector<std::string> zones;
  // Design points per zone id; missing zones use default_design_count.
  std::map<std::string, int> design_counts;
  int max_sources = 2;
  Eigen::VectorXd times;  // observation times; empty selects the default
  double rate = 0.2;      // g/s per source
  double duration = 300;  // s
  TransportOptions transport;

  int n_layers = 2;
  int m_inducing = 32;
  int hidden_width = 0;  // 0 keeps hidden layers at the input width
  int k_train = 3;
  int k_pred = 50;
  int iterations = 2000;
  double step = 0.01;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct EmulatorRecord {
  DmgpModel model;
  // The model is trained on standardized outputs so that every channel,
  // however faint, optimizes at the same scale.
  double y_mean = 0;
  double y_scale = 1;
  // Variance inflation fitted on the held-out points so that their
  // standardized residuals have unit second moment.  Serving an honest
  // covariance matters more than serving the model's self-belief: an
  // overconfident channel would otherwise veto the informative ones
  // during localization.  Never shrinks below 1.
  double calibration = 1;
  double final_bound = 0;
  double holdout_rmse = -1;  // -1 when no points were held out
  double output_range = 0;
  Eigen::Index design_count = 0;
  Eigen::Index train_rows = 0;
};

struct EmulatorBank {
  BuildingModel building;
  Eigen::VectorXd times;
  int max_sources = 0;
  std::map<EmulatorKey, EmulatorRecord> models;
  std::vector<EmulatorKey> failed;  // keys whose training diverged

  bool complete() const { return failed.empty(); }
};

// The standard observation grid: 2..18 minutes in 2 minute steps.
Eigen::VectorXd default_observation_times();

// Area-proportional design size, clamped into the supported range.
int default_design_count(const BuildingModel& bldg, int zone);

// Simulates Latin hypercube designs per (zone, count) and trains one
// model per sensor on the transformed responses.  Fully deterministic
// given the config seed.
EmulatorBank train_bank(const BuildingModel& bldg, const EmulatorConfig& cfg);

const EmulatorRecord& bank_entry(const EmulatorBank& bank,
                                 const EmulatorKey& key);

// Predictive Gaussian over the transformed sensor response at normalized
// source coordinates x in [-1,1]^{2 count}.  The covariance is for an
// observable value: the model's trained likelihood variance, which
// absorbs the simulator-vs-model discrepancy, is added to the function
// covariance before de-standardization.
PredictiveGaussian emulate(const EmulatorBank& bank, const EmulatorKey& key,
                           const Eigen::VectorXd& x);

// Sum over sensors of the Gaussian log density of the observed window.
// Every observed vector must cover the same leading stretch of the
// bank's observation times; the predictive moments are sliced to match.
double log_likelihood(const EmulatorBank& bank, int zone, int count,
                      const Eigen::VectorXd& x,
                      const std::map<int, Eigen::VectorXd>& observed);

void save_bank(const EmulatorBank& bank, const std::string& dir);
EmulatorBank load_bank(const BuildingModel& bldg, const std::string& dir);

}  // namespace dmgp
