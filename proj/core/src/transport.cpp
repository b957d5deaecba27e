#include "dmgp/transport.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dmgp/errors.hpp"
#include "json_io.hpp"

namespace dmgp {

void SourceScenario::validate(const BuildingModel& bldg) const {
  require(zone >= 0 && zone < bldg.n_zones(),
          "scenario: unknown source zone");
  require(!bldg.zones[zone].outdoor, "scenario: source zone is outdoors");
  require(count() >= 1 && count() <= 3,
          "scenario: source count must be between 1 and 3");
  require(rate >= 0, "scenario: rate must be nonnegative");
  require(duration >= 0, "scenario: duration must be nonnegative");
  for (std::size_t i = 0; i < locations.size(); ++i) {
    std::ostringstream msg;
    msg << "scenario: source " << i << " outside zone '"
        << bldg.zones[zone].id << "'";
    require(bldg.zones[zone].contains(locations[i]), msg.str());
  }
}

namespace {

// A point is represented by the cells it touches, with weights summing
// to 1.  A point exactly on an interior gridline is split half/half so
// that geometric mirror images stay mirror images on the grid.
using CellWeights = std::vector<std::pair<int, double>>;

struct Subgrid {
  int g = 0;
  double cell_volume = 0;
  Eigen::MatrixXd fx;  // (g-1) x g: draft flow cell(ix,iy) -> cell(ix+1,iy)
  Eigen::MatrixXd fy;  // g x (g-1): draft flow cell(ix,iy) -> cell(ix,iy+1)
  std::vector<CellWeights> attach;       // per path (empty if detached)
  std::vector<CellWeights> source_cell;  // per source
  CellWeights sensor_cell;               // cells at the sensor mount (centre)

  int cell(int ix, int iy) const { return iy * g + ix; }
};

std::vector<std::pair<int, double>> axis_cells(double coord, double origin,
                                               double extent, int g) {
  const double u = (coord - origin) / extent * g;
  const double r = std::round(u);
  if (std::abs(u - r) <= 1e-9 && r > 0 && r < g)
    return {{static_cast<int>(r) - 1, 0.5}, {static_cast<int>(r), 0.5}};
  const int i = std::clamp(static_cast<int>(std::floor(u)), 0, g - 1);
  return {{i, 1.0}};
}

CellWeights locate_cells(const Zone& z, const Eigen::Vector2d& p, int g) {
  CellWeights out;
  for (const auto& [ix, wx] : axis_cells(p.x(), z.x0, z.width, g))
    for (const auto& [iy, wy] : axis_cells(p.y(), z.y0, z.depth, g))
      out.emplace_back(iy * g + ix, wx * wy);
  return out;
}

// Boundary point where air enters/leaves the zone for this path: the
// exit of the ray from the zone centre toward the neighbour (or along
// the facade normal for outdoor paths).
Eigen::Vector2d attachment_point(const Zone& z, const Zone& other,
                                 const std::string& facade) {
  const Eigen::Vector2d c(z.x0 + 0.5 * z.width, z.y0 + 0.5 * z.depth);
  Eigen::Vector2d dir;
  if (other.outdoor) {
    if (facade == "W")
      dir = {-1, 0};
    else if (facade == "E")
      dir = {1, 0};
    else if (facade == "S")
      dir = {0, -1};
    else if (facade == "N")
      dir = {0, 1};
    else
      dir = {0, 0};
  } else {
    dir = Eigen::Vector2d(other.x0 + 0.5 * other.width,
                          other.y0 + 0.5 * other.depth) -
          c;
  }
  if (dir.norm() < 1e-12) return c;
  double t = std::numeric_limits<double>::infinity();
  if (dir.x() > 0) t = std::min(t, (z.x0 + z.width - c.x()) / dir.x());
  if (dir.x() < 0) t = std::min(t, (z.x0 - c.x()) / dir.x());
  if (dir.y() > 0) t = std::min(t, (z.y0 + z.depth - c.y()) / dir.y());
  if (dir.y() < 0) t = std::min(t, (z.y0 - c.y()) / dir.y());
  return c + t * dir;
}

Subgrid build_subgrid(const BuildingModel& bldg,
                      const AirflowSolution& airflow,
                      const SourceScenario& scenario,
                      const TransportOptions& opt) {
  Subgrid sg;
  sg.g = opt.grid;
  const int g = sg.g;
  const Zone& z = bldg.zones[scenario.zone];
  sg.cell_volume = z.volume() / double(g * g);

  sg.attach.assign(bldg.paths.size(), {});
  Eigen::VectorXd b = Eigen::VectorXd::Zero(g * g);
  for (std::size_t k = 0; k < bldg.paths.size(); ++k) {
    const FlowPath& p = bldg.paths[k];
    const bool from_here = p.from == scenario.zone;
    const bool to_here = p.to == scenario.zone;
    if (!from_here && !to_here) continue;
    const Zone& other = bldg.zones[from_here ? p.to : p.from];
    sg.attach[k] = locate_cells(z, attachment_point(z, other, p.facade), g);
    const double q =
        airflow.path_flow[static_cast<Eigen::Index>(k)] / airflow.rho;
    for (const auto& [cell, w] : sg.attach[k])
      b[cell] += w * (from_here ? -q : q);  // volumetric flow into the zone
  }

  // Discrete potential flow: unit-conductance Laplacian, net in/out as
  // divergence sources.  The rank-one term pins the (irrelevant) mean.
  b.array() -= b.mean();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(g * g, g * g);
  auto couple = [&](int a, int bb) {
    lap(a, a) += 1;
    lap(bb, bb) += 1;
    lap(a, bb) -= 1;
    lap(bb, a) -= 1;
  };
  for (int iy = 0; iy < g; ++iy)
    for (int ix = 0; ix + 1 < g; ++ix)
      couple(sg.cell(ix, iy), sg.cell(ix + 1, iy));
  for (int iy = 0; iy + 1 < g; ++iy)
    for (int ix = 0; ix < g; ++ix)
      couple(sg.cell(ix, iy), sg.cell(ix, iy + 1));
  lap.array() += 1.0 / double(g * g);
  const Eigen::VectorXd phi = lap.ldlt().solve(b);

  sg.fx.resize(g - 1, g);
  sg.fy.resize(g, g - 1);
  for (int iy = 0; iy < g; ++iy)
    for (int ix = 0; ix + 1 < g; ++ix)
      sg.fx(ix, iy) = phi[sg.cell(ix, iy)] - phi[sg.cell(ix + 1, iy)];
  for (int iy = 0; iy + 1 < g; ++iy)
    for (int ix = 0; ix < g; ++ix)
      sg.fy(ix, iy) = phi[sg.cell(ix, iy)] - phi[sg.cell(ix, iy + 1)];

  for (const Eigen::Vector2d& loc : scenario.locations)
    sg.source_cell.push_back(locate_cells(z, loc, g));
  sg.sensor_cell = locate_cells(
      z, {z.x0 + 0.5 * z.width, z.y0 + 0.5 * z.depth}, g);
  return sg;
}

}  // namespace

TransportResult simulate_transport(const BuildingModel& bldg,
                                   const AirflowSolution& airflow,
                                   const SourceScenario& scenario,
                                   const Eigen::VectorXd& times,
                                   const TransportOptions& opt) {
  require(times.size() >= 1, "transport: no output times");
  require(times.minCoeff() >= 0, "transport: negative output time");
  for (Eigen::Index i = 1; i < times.size(); ++i)
    require(times[i] > times[i - 1],
            "transport: output times must be strictly increasing");
  require(opt.dt > 0 && opt.grid >= 1 && opt.substep_target > 0,
          "transport: bad integration options");
  require(airflow.path_flow.size() ==
              static_cast<Eigen::Index>(bldg.paths.size()),
          "transport: airflow solution does not match building");
  if (scenario.count() > 0) scenario.validate(bldg);

  const Eigen::Index nz = bldg.n_zones();
  std::vector<Eigen::Index> slot_of(nz, -1);
  std::vector<Eigen::Index> zone_of;
  for (Eigen::Index z = 0; z < nz; ++z)
    if (!bldg.zones[z].outdoor) {
      slot_of[z] = static_cast<Eigen::Index>(zone_of.size());
      zone_of.push_back(z);
    }
  const Eigen::Index n_int = static_cast<Eigen::Index>(zone_of.size());

  const bool has_grid = scenario.count() > 0;
  Subgrid sg;
  if (has_grid) sg = build_subgrid(bldg, airflow, scenario, opt);
  const Eigen::Index n_cells = has_grid ? sg.g * sg.g : 0;
  const Eigen::Index cell_off = n_int;
  const Eigen::Index rel_off = n_int + n_cells;
  const Eigen::Index exh_off = rel_off + 1;
  const Eigen::Index dim = exh_off + 1;

  Eigen::VectorXd volume(n_int);
  for (Eigen::Index i = 0; i < n_int; ++i)
    volume[i] = bldg.zones[zone_of[i]].volume();

  std::vector<double> path_q(bldg.paths.size());
  for (std::size_t k = 0; k < bldg.paths.size(); ++k)
    path_q[k] = airflow.path_flow[static_cast<Eigen::Index>(k)] / airflow.rho;

  // States standing in for a path endpoint's air: the attachment cells
  // for the resolved source zone, the mixed zone state otherwise, and
  // nothing for outdoors (which is clean).  Mass leaves each state in
  // proportion to its own concentration so nothing can be overdrawn.
  auto endpoint_states = [&](int zone, std::size_t path) -> CellWeights {
    CellWeights out;
    if (bldg.zones[zone].outdoor) return out;
    if (has_grid && zone == scenario.zone)
      for (const auto& [cell, w] : sg.attach[path])
        out.emplace_back(static_cast<int>(cell_off) + cell, w);
    else
      out.emplace_back(static_cast<int>(slot_of[zone]), 1.0);
    return out;
  };
  std::vector<CellWeights> from_states(bldg.paths.size());
  std::vector<CellWeights> to_states(bldg.paths.size());
  for (std::size_t k = 0; k < bldg.paths.size(); ++k) {
    from_states[k] = endpoint_states(bldg.paths[k].from, k);
    to_states[k] = endpoint_states(bldg.paths[k].to, k);
  }

  auto deriv = [&](double step_start, const Eigen::VectorXd& s) {
    Eigen::VectorXd dm = Eigen::VectorXd::Zero(dim);  // mass rates, g/s
    const bool active = step_start < scenario.duration;
    if (has_grid && active)
      for (const CellWeights& cw : sg.source_cell) {
        for (const auto& [cell, w] : cw)
          dm[cell_off + cell] += w * scenario.rate;
        dm[rel_off] += scenario.rate;
      }

    if (has_grid) {
      const int g = sg.g;
      for (int iy = 0; iy < g; ++iy)
        for (int ix = 0; ix + 1 < g; ++ix) {
          const Eigen::Index a = cell_off + sg.cell(ix, iy);
          const Eigen::Index b = cell_off + sg.cell(ix + 1, iy);
          const double f = sg.fx(ix, iy);
          const double flux = (f > 0 ? f * s[a] : f * s[b]) +
                              opt.mix_exchange * (s[a] - s[b]);
          dm[a] -= flux;
          dm[b] += flux;
        }
      for (int iy = 0; iy + 1 < g; ++iy)
        for (int ix = 0; ix < g; ++ix) {
          const Eigen::Index a = cell_off + sg.cell(ix, iy);
          const Eigen::Index b = cell_off + sg.cell(ix, iy + 1);
          const double f = sg.fy(ix, iy);
          const double flux = (f > 0 ? f * s[a] : f * s[b]) +
                              opt.mix_exchange * (s[a] - s[b]);
          dm[a] -= flux;
          dm[b] += flux;
        }
    }

    for (std::size_t k = 0; k < bldg.paths.size(); ++k) {
      const FlowPath& p = bldg.paths[k];
      const double coef_ft = std::max(path_q[k], 0.0) + p.exchange;
      const double coef_tf = std::max(-path_q[k], 0.0) + p.exchange;
      double flux_ft = 0;
      for (const auto& [idx, w] : from_states[k]) {
        const double f = coef_ft * w * s[idx];
        flux_ft += f;
        dm[idx] -= f;
      }
      double flux_tf = 0;
      for (const auto& [idx, w] : to_states[k]) {
        const double f = coef_tf * w * s[idx];
        flux_tf += f;
        dm[idx] -= f;
      }
      if (bldg.zones[p.to].outdoor)
        dm[exh_off] += flux_ft;
      else
        for (const auto& [idx, w] : to_states[k]) dm[idx] += w * flux_ft;
      if (bldg.zones[p.from].outdoor)
        dm[exh_off] += flux_tf;
      else
        for (const auto& [idx, w] : from_states[k]) dm[idx] += w * flux_tf;
    }

    Eigen::VectorXd ds(dim);
    for (Eigen::Index i = 0; i < n_int; ++i) ds[i] = dm[i] / volume[i];
    for (Eigen::Index i = 0; i < n_cells; ++i)
      ds[cell_off + i] = dm[cell_off + i] / sg.cell_volume;
    ds[rel_off] = dm[rel_off];
    ds[exh_off] = dm[exh_off];
    if (has_grid) ds[slot_of[scenario.zone]] = 0;  // resolved by the grid
    return ds;
  };

  // Subgrid cells turn over much faster than whole zones (a corridor
  // cell can empty in well under a second), so the outer step is split
  // into internal substeps keyed to the stiffest turnover rate.
  double max_rate = 0;
  if (has_grid) {
    Eigen::VectorXd out_rate = Eigen::VectorXd::Zero(n_cells);
    const int g = sg.g;
    for (int iy = 0; iy < g; ++iy)
      for (int ix = 0; ix + 1 < g; ++ix) {
        const double f = sg.fx(ix, iy);
        out_rate[sg.cell(ix, iy)] += std::max(f, 0.0) + opt.mix_exchange;
        out_rate[sg.cell(ix + 1, iy)] += std::max(-f, 0.0) + opt.mix_exchange;
      }
    for (int iy = 0; iy + 1 < g; ++iy)
      for (int ix = 0; ix < g; ++ix) {
        const double f = sg.fy(ix, iy);
        out_rate[sg.cell(ix, iy)] += std::max(f, 0.0) + opt.mix_exchange;
        out_rate[sg.cell(ix, iy + 1)] += std::max(-f, 0.0) + opt.mix_exchange;
      }
    for (std::size_t k = 0; k < bldg.paths.size(); ++k) {
      const FlowPath& p = bldg.paths[k];
      double coef = 0;
      if (p.from == scenario.zone)
        coef = std::max(path_q[k], 0.0) + p.exchange;
      else if (p.to == scenario.zone)
        coef = std::max(-path_q[k], 0.0) + p.exchange;
      else
        continue;
      for (const auto& [cell, w] : sg.attach[k]) out_rate[cell] += w * coef;
    }
    max_rate = out_rate.maxCoeff() / sg.cell_volume;
  }
  for (std::size_t k = 0; k < bldg.paths.size(); ++k) {
    const FlowPath& p = bldg.paths[k];
    if (!bldg.zones[p.from].outdoor)
      max_rate = std::max(max_rate, (std::max(path_q[k], 0.0) + p.exchange) /
                                        volume[slot_of[p.from]]);
    if (!bldg.zones[p.to].outdoor)
      max_rate = std::max(max_rate, (std::max(-path_q[k], 0.0) + p.exchange) /
                                        volume[slot_of[p.to]]);
  }
  const int n_sub = std::max(
      1, static_cast<int>(std::ceil(opt.dt * max_rate / opt.substep_target)));
  const double h = opt.dt / n_sub;

  const double t_end = times[times.size() - 1];
  const Eigen::Index steps = static_cast<Eigen::Index>(
      std::ceil(t_end / opt.dt - 1e-9));
  Eigen::MatrixXd traj(steps + 1, dim);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(dim);
  traj.row(0) = s;
  double min_state = 0;
  for (Eigen::Index i = 0; i < steps; ++i) {
    const double t0 = double(i) * opt.dt;
    // The source gate is sampled once per outer step, so the vector
    // field is constant across the substeps of one step.
    for (int sub = 0; sub < n_sub; ++sub) {
      const Eigen::VectorXd k1 = deriv(t0, s);
      const Eigen::VectorXd k2 = deriv(t0, s + 0.5 * h * k1);
      const Eigen::VectorXd k3 = deriv(t0, s + 0.5 * h * k2);
      const Eigen::VectorXd k4 = deriv(t0, s + h * k3);
      s += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
      Eigen::Index where;
      min_state = std::min(min_state, s.minCoeff(&where));
      if (min_state < -1e-12) {
        std::ostringstream msg;
        msg << "transport: negative concentration " << min_state
            << " in state " << where << " at t=" << (t0 + (sub + 1) * h)
            << "; reduce the step";
        throw std::runtime_error(msg.str());
      }
    }
    traj.row(i + 1) = s;
  }

  TransportResult out;
  out.times = times;
  out.min_state = min_state;
  out.concentration = Eigen::MatrixXd::Zero(times.size(), nz);
  out.observed = Eigen::MatrixXd::Zero(times.size(), nz);
  out.released.resize(times.size());
  out.in_building.resize(times.size());
  out.exhausted.resize(times.size());
  for (Eigen::Index ti = 0; ti < times.size(); ++ti) {
    const double pos = std::min(times[ti] / opt.dt, double(steps));
    const Eigen::Index lo =
        std::min(static_cast<Eigen::Index>(std::floor(pos)), steps - 1);
    const double w = pos - double(lo);
    const Eigen::VectorXd si =
        (1 - w) * traj.row(lo) + w * traj.row(lo + 1);
    for (Eigen::Index i = 0; i < n_int; ++i) {
      const Eigen::Index z = zone_of[i];
      double c = si[i];
      double obs = c;
      if (has_grid && z == scenario.zone) {
        c = si.segment(cell_off, n_cells).mean();
        obs = 0;
        for (const auto& [cell, cw] : sg.sensor_cell)
          obs += cw * si[cell_off + cell];
      }
      out.concentration(ti, z) = std::max(c, 0.0);
      out.observed(ti, z) = std::max(obs, 0.0);
    }
    double mass = 0;
    for (Eigen::Index i = 0; i < n_int; ++i) mass += si[i] * volume[i];
    if (has_grid) {
      mass -= si[slot_of[scenario.zone]] * volume[slot_of[scenario.zone]];
      mass += si.segment(cell_off, n_cells).sum() * sg.cell_volume;
    }
    out.released[ti] = si[rel_off];
    out.in_building[ti] = mass;
    out.exhausted[ti] = si[exh_off];
  }
  return out;
}

std::vector<SensorRecord> sense(const TransportResult& result,
                                const BuildingModel& bldg,
                                const Eigen::VectorXd& noise_sd,
                                std::uint64_t seed) {
  require(noise_sd.size() == static_cast<Eigen::Index>(bldg.sensors.size()),
          "sense: need one noise level per sensor");
  require(noise_sd.minCoeff() >= 0, "sense: negative noise level");
  Rng rng(derive_seed(seed, "sense"));
  std::vector<SensorRecord> records;
  for (std::size_t j = 0; j < bldg.sensors.size(); ++j) {
    SensorRecord rec;
    rec.zone = bldg.sensors[j];
    rec.times = result.times;
    rec.raw.resize(result.times.size());
    rec.y.resize(result.times.size());
    for (Eigen::Index t = 0; t < result.times.size(); ++t) {
      const double raw = result.observed(t, rec.zone) +
                         noise_sd[static_cast<Eigen::Index>(j)] * rng.normal();
      rec.raw[t] = std::max(raw, 0.0);
      rec.y[t] = std::log1p(rec.raw[t]);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

Eigen::MatrixXd latin_hypercube(Eigen::Index n, Eigen::Index dims, Rng& rng) {
  require(n >= 1 && dims >= 1, "latin_hypercube: empty design");
  Eigen::MatrixXd u(n, dims);
  std::vector<Eigen::Index> perm(n);
  for (Eigen::Index d = 0; d < dims; ++d) {
    for (Eigen::Index i = 0; i < n; ++i) perm[i] = i;
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    for (Eigen::Index i = 0; i < n; ++i)
      u(i, d) = (double(perm[i]) + rng.uniform()) / double(n);
  }
  return u;
}

void canonicalize_sources(std::vector<Eigen::Vector2d>& locations) {
  std::sort(locations.begin(), locations.end(),
            [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
              return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
            });
}

Eigen::VectorXd normalize_locations(const Zone& zone,
                                    const std::vector<Eigen::Vector2d>& locs) {
  Eigen::VectorXd u(2 * locs.size());
  for (std::size_t i = 0; i < locs.size(); ++i) {
    u[2 * i] = 2.0 * (locs[i].x() - zone.x0) / zone.width - 1.0;
    u[2 * i + 1] = 2.0 * (locs[i].y() - zone.y0) / zone.depth - 1.0;
  }
  return u;
}

std::vector<Eigen::Vector2d> denormalize_locations(const Zone& zone,
                                                   const Eigen::VectorXd& u) {
  require(u.size() % 2 == 0, "denormalize: odd coordinate count");
  std::vector<Eigen::Vector2d> locs(u.size() / 2);
  for (std::size_t i = 0; i < locs.size(); ++i) {
    locs[i].x() = zone.x0 + 0.5 * (u[2 * i] + 1.0) * zone.width;
    locs[i].y() = zone.y0 + 0.5 * (u[2 * i + 1] + 1.0) * zone.depth;
  }
  return locs;
}

TrainingSet generate_training_set(
    const BuildingModel& bldg, const AirflowSolution& airflow, int zone,
    int count, const std::vector<std::vector<Eigen::Vector2d>>& design,
    const Eigen::VectorXd& times, double rate, double duration,
    const TransportOptions& opt) {
  require(zone >= 0 && zone < bldg.n_zones() && !bldg.zones[zone].outdoor,
          "training set: bad source zone");
  require(count >= 1 && count <= 3, "training set: bad source count");
  require(!design.empty(), "training set: empty design");
  const Zone& z = bldg.zones[zone];
  for (std::size_t i = 0; i < design.size(); ++i) {
    std::ostringstream msg;
    msg << "training set: design point " << i;
    require(static_cast<int>(design[i].size()) == count,
            msg.str() + " has wrong source count");
    for (const Eigen::Vector2d& p : design[i])
      require(z.contains(p),
              msg.str() + " outside zone '" + z.id + "'");
  }

  TrainingSet ts;
  ts.zone = zone;
  ts.count = count;
  ts.times = times;
  const Eigen::Index n = static_cast<Eigen::Index>(design.size());
  ts.x.resize(n, 2 * count);
  ts.y.assign(bldg.sensors.size(),
              Eigen::MatrixXd::Zero(n, times.size()));
  ts.raw_peak = Eigen::VectorXd::Zero(bldg.sensors.size());

  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Eigen::Vector2d> locs = design[static_cast<std::size_t>(i)];
    canonicalize_sources(locs);
    ts.x.row(i) = normalize_locations(z, locs).transpose();
    SourceScenario sc;
    sc.zone = zone;
    sc.locations = locs;
    sc.rate = rate;
    sc.duration = duration;
    const TransportResult sim =
        simulate_transport(bldg, airflow, sc, times, opt);
    for (std::size_t j = 0; j < bldg.sensors.size(); ++j) {
      const Eigen::VectorXd raw = sim.observed.col(bldg.sensors[j]);
      ts.y[j].row(i) = raw.array().log1p().transpose();
      ts.raw_peak[static_cast<Eigen::Index>(j)] = std::max(
          ts.raw_peak[static_cast<Eigen::Index>(j)], raw.maxCoeff());
    }
  }
  return ts;
}

namespace {

std::string training_file_name(const BuildingModel& bldg,
                               const TrainingSet& ts, std::size_t sensor) {
  std::ostringstream name;
  name << "z" << bldg.zones[ts.zone].id << "_n" << ts.count << "_s"
       << bldg.zones[bldg.sensors[sensor]].id << ".csv";
  return name.str();
}

}  // namespace

void write_training_set(const TrainingSet& ts, const BuildingModel& bldg,
                        const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (fs::exists(manifest_path)) {
    manifest = jsonio::load_file(manifest_path.string());
  } else {
    manifest["schema_version"] = 1;
    manifest["entries"] = nlohmann::json::array();
  }
  const std::string zone_id = bldg.zones[ts.zone].id;
  nlohmann::json kept = nlohmann::json::array();
  for (const auto& e : manifest["entries"])
    if (!(e.at("zone") == zone_id && e.at("count") == ts.count))
      kept.push_back(e);
  manifest["entries"] = std::move(kept);

  for (std::size_t j = 0; j < bldg.sensors.size(); ++j) {
    const std::string file = training_file_name(bldg, ts, j);
    std::ofstream out(fs::path(dir) / file);
    require(out.good(), "training set: cannot write " + file);
    out << std::setprecision(17);
    for (int sidx = 0; sidx < ts.count; ++sidx)
      out << (sidx ? "," : "") << "x" << (sidx + 1) << ",y" << (sidx + 1);
    for (Eigen::Index t = 0; t < ts.times.size(); ++t)
      out << ",t" << ts.times[t];
    out << "\n";
    for (Eigen::Index i = 0; i < ts.x.rows(); ++i) {
      for (Eigen::Index c = 0; c < ts.x.cols(); ++c)
        out << (c ? "," : "") << ts.x(i, c);
      for (Eigen::Index t = 0; t < ts.times.size(); ++t)
        out << "," << ts.y[j](i, t);
      out << "\n";
    }

    nlohmann::json entry;
    entry["zone"] = zone_id;
    entry["count"] = ts.count;
    entry["sensor"] = bldg.zones[bldg.sensors[j]].id;
    entry["file"] = file;
    entry["rows"] = ts.x.rows();
    entry["times"] = jsonio::from_vector(ts.times);
    entry["raw_peak"] = ts.raw_peak[static_cast<Eigen::Index>(j)];
    entry["noise_sd"] = 0.01 * ts.raw_peak[static_cast<Eigen::Index>(j)];
    manifest["entries"].push_back(std::move(entry));
  }
  jsonio::save_file(manifest, manifest_path.string());
}

TrainingSet load_training_set(const BuildingModel& bldg,
                              const std::string& dir,
                              const std::string& zone_id, int count) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest =
      jsonio::load_file((fs::path(dir) / "manifest.json").string());

  TrainingSet ts;
  ts.zone = bldg.zone_index(zone_id);
  ts.count = count;
  ts.y.resize(bldg.sensors.size());
  ts.raw_peak = Eigen::VectorXd::Zero(bldg.sensors.size());

  for (std::size_t j = 0; j < bldg.sensors.size(); ++j) {
    const std::string sensor_id = bldg.zones[bldg.sensors[j]].id;
    const nlohmann::json* found = nullptr;
    for (const auto& e : manifest.at("entries"))
      if (e.at("zone") == zone_id && e.at("count") == count &&
          e.at("sensor") == sensor_id)
        found = &e;
    require(found != nullptr, "training set: no manifest entry for zone " +
                                  zone_id + " sensor " + sensor_id);
    ts.raw_peak[static_cast<Eigen::Index>(j)] =
        found->at("raw_peak").get<double>();
    if (j == 0) ts.times = jsonio::to_vector(found->at("times"));

    std::ifstream in(fs::path(dir) / found->at("file").get<std::string>());
    require(in.good(), "training set: cannot open " +
                           found->at("file").get<std::string>());
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
      require(static_cast<Eigen::Index>(row.size()) ==
                  2 * count + ts.times.size(),
              "training set: malformed row in " +
                  found->at("file").get<std::string>());
      rows.push_back(std::move(row));
    }
    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd x(n, 2 * count), y(n, ts.times.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < 2 * count; ++c)
        x(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
      for (Eigen::Index t = 0; t < ts.times.size(); ++t)
        y(i, t) = rows[static_cast<std::size_t>(i)]
                      [static_cast<std::size_t>(2 * count + t)];
    }
    if (j == 0)
      ts.x = x;
    else
      require((ts.x - x).cwiseAbs().maxCoeff() == 0.0,
              "training set: inconsistent design across sensors");
    ts.y[j] = y;
  }
  return ts;
}

Eigen::VectorXd manifest_noise_sd(const std::string& dir,
                                  const std::string& zone_id, int count) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest =
      jsonio::load_file((fs::path(dir) / "manifest.json").string());
  std::vector<double> sd;
  for (const auto& e : manifest.at("entries"))
    if (e.at("zone") == zone_id && e.at("count") == count)
      sd.push_back(e.at("noise_sd").get<double>());
  require(!sd.empty(), "manifest: no entries for zone " + zone_id);
  return Eigen::Map<Eigen::VectorXd>(sd.data(),
                                     static_cast<Eigen::Index>(sd.size()));
}

}  // namespace dmgp
