#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dmgp/airflow.hpp"
#include "dmgp/building.hpp"
#include "dmgp/rng.hpp"

namespace dmgp {

struct SourceScenario {
  int zone = -1;
  std::vector<Eigen::Vector2d> locations;  // m, within the zone rectangle
  double rate = 0.2;                       // g/s per source
  double duration = 300.0;                 // s

  int count() const { return static_cast<int>(locations.size()); }
  void validate(const BuildingModel& bldg) const;
};

struct TransportOptions {
  double dt = 1.0;             // outer RK4 step, s; sets source gating cadence
  int grid = 8;                // source-zone subgrid resolution per axis
  double mix_exchange = 0.05;  // m^3/s isotropic cell-to-cell mixing
  // Fast subgrid cells are integrated with internal substeps chosen so
  // that (outflow rate x substep) stays below this target.
  double substep_target = 0.5;
};

struct TransportResult {
  Eigen::VectorXd times;
  // Zone-mean concentrations, times x zones, g/m^3 (outdoor columns 0).
  Eigen::MatrixXd concentration;
  // What a sensor mounted at the zone centre reads: identical to the
  // zone mean except in the source zone, where it is the average of the
  // subgrid cell(s) at the centre.  This keeps the reading sensitive to
  // where in the room the source sits.
  Eigen::MatrixXd observed;
  // Mass bookkeeping at the output times, g.
  Eigen::VectorXd released, in_building, exhausted;
  // Smallest raw state seen while integrating; a solver health check
  // (must stay above -1e-12 or the run is aborted).
  double min_state = 0;
};

// Transient well-mixed transport over the airflow network.  The source's
// zone is resolved on a grid x grid subgrid: the net draft through the
// zone induces an internal potential-flow field (upwinded), isotropic
// mixing exchanges between neighbouring cells, and openings attach to
// the boundary cell nearest the neighbouring zone.  Source input is held
// constant across each integration step.
TransportResult simulate_transport(const BuildingModel& bldg,
                                   const AirflowSolution& airflow,
                                   const SourceScenario& scenario,
                                   const Eigen::VectorXd& times,
                                   const TransportOptions& opt = {});

struct SensorRecord {
  int zone = -1;
  Eigen::VectorXd times;
  Eigen::VectorXd raw;  // noisy concentration after clamping at 0
  Eigen::VectorXd y;    // log1p(raw)
};

std::vector<SensorRecord> sense(const TransportResult& result,
                                const BuildingModel& bldg,
                                const Eigen::VectorXd& noise_sd,
                                std::uint64_t seed);

// n x dims stratified design on [0, 1].
Eigen::MatrixXd latin_hypercube(Eigen::Index n, Eigen::Index dims, Rng& rng);

// Sources are interchangeable; fix a canonical (lexicographic) order so
// the emulator input space has no permutation redundancy.
void canonicalize_sources(std::vector<Eigen::Vector2d>& locations);

// Flatten locations to [-1, 1] coordinates relative to the zone
// rectangle, and back.
Eigen::VectorXd normalize_locations(const Zone& zone,
                                    const std::vector<Eigen::Vector2d>& locs);
std::vector<Eigen::Vector2d> denormalize_locations(const Zone& zone,
                                                   const Eigen::VectorXd& u);

struct TrainingSet {
  int zone = -1;
  int count = 0;
  Eigen::VectorXd times;
  Eigen::MatrixXd x;               // N x 2*count, normalized
  std::vector<Eigen::MatrixXd> y;  // per sensor: N x P, log1p, noise-free
  Eigen::VectorXd raw_peak;        // per sensor: peak raw concentration
};

TrainingSet generate_training_set(
    const BuildingModel& bldg, const AirflowSolution& airflow, int zone,
    int count, const std::vector<std::vector<Eigen::Vector2d>>& design,
    const Eigen::VectorXd& times, double rate = 0.2, double duration = 300.0,
    const TransportOptions& opt = {});

// One CSV per sensor (coordinate columns, then one column per output
// time) plus a manifest.json entry keyed by (zone, count, sensor).  The
// manifest also records the default sensor noise, 1% of the sensor's
// peak training concentration.
void write_training_set(const TrainingSet& ts, const BuildingModel& bldg,
                        const std::string& dir);
TrainingSet load_training_set(const BuildingModel& bldg,
                              const std::string& dir,
                              const std::string& zone_id, int count);
// Per-sensor noise defaults recorded in the manifest for (zone, count).
Eigen::VectorXd manifest_noise_sd(const std::string& dir,
                                  const std::string& zone_id, int count);

}  // namespace dmgp
