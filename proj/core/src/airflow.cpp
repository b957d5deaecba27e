#include "dmgp/airflow.hpp"

#include <cmath>
#include <sstream>

#include "dmgp/errors.hpp"

namespace dmgp {

double powerlaw_flow(double c, double n, double dp, double dp_lin) {
  const double mag = std::abs(dp);
  if (mag < dp_lin) return c * std::pow(dp_lin, n - 1.0) * dp;
  return c * (dp >= 0 ? 1.0 : -1.0) * std::pow(mag, n);
}

namespace {

double powerlaw_slope(double c, double n, double dp, double dp_lin = 1e-6) {
  const double mag = std::abs(dp);
  if (mag < dp_lin) return c * std::pow(dp_lin, n - 1.0);
  return c * n * std::pow(mag, n - 1.0);
}

}  // namespace

AirflowSolution solve_airflows(const BuildingModel& bldg) {
  bldg.validate();
  const Eigen::Index nz = bldg.n_zones();
  const double rho = bldg.ambient.air_density();

  // Unknowns: interior zone pressures.  Outdoor sides contribute a fixed
  // facade wind pressure per path.
  std::vector<Eigen::Index> unknown_of(nz, -1);
  std::vector<Eigen::Index> zone_of;
  for (Eigen::Index z = 0; z < nz; ++z)
    if (!bldg.zones[z].outdoor) {
      unknown_of[z] = static_cast<Eigen::Index>(zone_of.size());
      zone_of.push_back(z);
    }
  const Eigen::Index nu = static_cast<Eigen::Index>(zone_of.size());

  // Effective pressure seen by a path endpoint.
  auto endpoint_pressure = [&](const Eigen::VectorXd& p, int zone,
                               const FlowPath& path) {
    if (bldg.zones[zone].outdoor) return bldg.ambient.wind_pressure(path.facade);
    return p[unknown_of[zone]];
  };

  double init = 0;
  int n_boundary = 0;
  for (const FlowPath& path : bldg.paths)
    for (int zone : {path.from, path.to})
      if (bldg.zones[zone].outdoor) {
        init += bldg.ambient.wind_pressure(path.facade);
        ++n_boundary;
      }
  Eigen::VectorXd p = Eigen::VectorXd::Constant(
      nu, n_boundary > 0 ? init / n_boundary : 0.0);

  auto residual = [&](const Eigen::VectorXd& pr) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(nu);
    for (const FlowPath& path : bldg.paths) {
      const double dp = endpoint_pressure(pr, path.from, path) -
                        endpoint_pressure(pr, path.to, path);
      const double f = powerlaw_flow(path.c, path.n, dp);
      if (unknown_of[path.from] >= 0) r[unknown_of[path.from]] -= f;
      if (unknown_of[path.to] >= 0) r[unknown_of[path.to]] += f;
    }
    return r;
  };

  const int max_iter = 200;
  Eigen::VectorXd r = residual(p);
  int it = 0;
  for (; it < max_iter; ++it) {
    // Convergence: net imbalance small relative to each zone's
    // throughflow (absolute floor covers the windless case).
    Eigen::VectorXd through = Eigen::VectorXd::Zero(nu);
    for (const FlowPath& path : bldg.paths) {
      const double dp = endpoint_pressure(p, path.from, path) -
                        endpoint_pressure(p, path.to, path);
      const double f = std::abs(powerlaw_flow(path.c, path.n, dp));
      if (unknown_of[path.from] >= 0) through[unknown_of[path.from]] += f;
      if (unknown_of[path.to] >= 0) through[unknown_of[path.to]] += f;
    }
    bool done = true;
    for (Eigen::Index i = 0; i < nu; ++i)
      if (std::abs(r[i]) > 1e-8 * std::max(0.5 * through[i], 1e-12))
        done = false;
    if (done) break;

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nu, nu);
    for (const FlowPath& path : bldg.paths) {
      const double dp = endpoint_pressure(p, path.from, path) -
                        endpoint_pressure(p, path.to, path);
      const double s = powerlaw_slope(path.c, path.n, dp);
      const Eigen::Index ui = unknown_of[path.from];
      const Eigen::Index uj = unknown_of[path.to];
      // r_from -= f, r_to += f with df/d(dp) = s and dp = p_from - p_to.
      if (ui >= 0) jac(ui, ui) -= s;
      if (uj >= 0) jac(uj, uj) -= s;
      if (ui >= 0 && uj >= 0) {
        jac(ui, uj) += s;
        jac(uj, ui) += s;
      }
    }
    const Eigen::VectorXd step = (-jac).ldlt().solve(r);

    double alpha = 1.0;
    const double r0 = r.norm();
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving, alpha *= 0.5) {
      const Eigen::VectorXd cand = p + alpha * step;
      const Eigen::VectorXd rc = residual(cand);
      if (rc.norm() < r0) {
        p = cand;
        r = rc;
        improved = true;
        break;
      }
    }
    if (!improved) break;  // stagnated; convergence check decides below
  }

  {
    Eigen::VectorXd through = Eigen::VectorXd::Zero(nu);
    for (const FlowPath& path : bldg.paths) {
      const double dp = endpoint_pressure(p, path.from, path) -
                        endpoint_pressure(p, path.to, path);
      const double f = std::abs(powerlaw_flow(path.c, path.n, dp));
      if (unknown_of[path.from] >= 0) through[unknown_of[path.from]] += f;
      if (unknown_of[path.to] >= 0) through[unknown_of[path.to]] += f;
    }
    double worst = 0;
    for (Eigen::Index i = 0; i < nu; ++i)
      worst = std::max(worst,
                       std::abs(r[i]) / std::max(0.5 * through[i], 1e-12));
    if (worst > 1e-8) {
      std::ostringstream msg;
      msg << "airflow: Newton did not converge (relative imbalance " << worst
          << " after " << it << " iterations, residual norm " << r.norm()
          << ")";
      throw std::runtime_error(msg.str());
    }

    AirflowSolution sol;
    sol.rho = rho;
    sol.iterations = it;
    sol.residual = worst;
    sol.pressure = Eigen::VectorXd::Zero(nz);
    for (Eigen::Index i = 0; i < nu; ++i) sol.pressure[zone_of[i]] = p[i];
    sol.path_flow.resize(bldg.paths.size());
    sol.flow = Eigen::MatrixXd::Zero(nz, nz);
    for (std::size_t k = 0; k < bldg.paths.size(); ++k) {
      const FlowPath& path = bldg.paths[k];
      const double dp = endpoint_pressure(p, path.from, path) -
                        endpoint_pressure(p, path.to, path);
      const double f = powerlaw_flow(path.c, path.n, dp);
      sol.path_flow[static_cast<Eigen::Index>(k)] = f;
      if (f >= 0)
        sol.flow(path.from, path.to) += f;
      else
        sol.flow(path.to, path.from) += -f;
    }
    return sol;
  }
}

}  // namespace dmgp
