#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

namespace dmgp {

struct Zone {
  std::string id;
  double x0 = 0, y0 = 0, width = 0, depth = 0;  // floor rectangle, m
  double height = 0;                            // m
  bool outdoor = false;

  double area() const { return width * depth; }
  double volume() const { return area() * height; }
  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= x0 && p.x() <= x0 + width && p.y() >= y0 &&
           p.y() <= y0 + depth;
  }
};

// Power-law opening F = c sign(dP) |dP|^n (kg/s) between two zones.
// `facade` selects the wind pressure coefficient when one side is
// outdoors.  `exchange` is a symmetric two-way volumetric flow (m^3/s)
// superposed on the net draft: large openings mix in both directions
// even when the net flow is one-way.
struct FlowPath {
  int from = -1, to = -1;
  double c = 0;
  double n = 0.5;
  std::string facade;
  double exchange = 0;
};

struct Ambient {
  double temperature_c = 23.0;
  double wind_speed = 3.6;                 // m/s
  std::map<std::string, double> cp;        // pressure coefficient per facade

  double air_density() const {             // dry air, ideal gas
    return 101325.0 * 0.0289647 / (8.31446 * (temperature_c + 273.15));
  }
  // Stagnation pressure contribution on a facade, Pa.
  double wind_pressure(const std::string& facade) const;
};

struct BuildingModel {
  std::vector<Zone> zones;
  std::vector<FlowPath> paths;
  Ambient ambient;
  std::vector<int> sensors;  // zone indices

  int zone_index(const std::string& id) const;
  Eigen::Index n_zones() const {
    return static_cast<Eigen::Index>(zones.size());
  }
  // Throws ContractViolation on schema violations: exponents outside
  // [0.5, 1], nonpositive interior geometry, interior zones that cannot
  // reach outdoors, paths without a facade on an outdoor side.
  void validate() const;
};

BuildingModel load_building(const std::string& path);
void save_building(const BuildingModel& bldg, const std::string& path);

// Six-zone two-corridor layout used throughout: four 5x5 m rooms in two
// mirrored rows, a corridor pair between them, windows west/east and a
// sensor in every room.  Wind blows from the west.
BuildingModel desk_building();

}  // namespace dmgp
