#pragma once

#include <Eigen/Dense>

#include "dmgp/building.hpp"

namespace dmgp {

// Signed power-law opening flow, kg/s, laminarized below dp_lin so the
// Newton Jacobian stays bounded near zero pressure difference.
double powerlaw_flow(double c, double n, double dp, double dp_lin = 1e-6);

struct AirflowSolution {
  Eigen::MatrixXd flow;       // flow(i, j) >= 0: total mass flow i -> j, kg/s
  Eigen::VectorXd path_flow;  // signed along each path's from -> to
  Eigen::VectorXd pressure;   // zone pressures, Pa (outdoor reference 0)
  double rho = 0;             // air density, kg/m^3
  int iterations = 0;
  double residual = 0;        // worst per-zone relative mass imbalance
};

// Steady-state zone pressures by damped Newton iteration on nodal mass
// balance.  Converged when every zone's net imbalance is within 1e-8 of
// its total throughflow.
AirflowSolution solve_airflows(const BuildingModel& bldg);

}  // namespace dmgp
