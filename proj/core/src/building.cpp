#include "dmgp/building.hpp"

#include <deque>
#include <set>
#include <sstream>

#include "dmgp/errors.hpp"
#include "json_io.hpp"

namespace dmgp {

double Ambient::wind_pressure(const std::string& facade) const {
  const auto it = cp.find(facade);
  require(it != cp.end(),
          "ambient: no pressure coefficient for facade '" + facade + "'");
  return 0.5 * air_density() * it->second * wind_speed * wind_speed;
}

int BuildingModel::zone_index(const std::string& id) const {
  for (std::size_t i = 0; i < zones.size(); ++i)
    if (zones[i].id == id) return static_cast<int>(i);
  throw ContractViolation("building: unknown zone id '" + id + "'");
}

void BuildingModel::validate() const {
  require(!zones.empty(), "building: no zones");
  std::set<std::string> ids;
  for (const Zone& z : zones) {
    require(ids.insert(z.id).second,
            "building: duplicate zone id '" + z.id + "'");
    if (!z.outdoor) {
      require(z.area() > 0, "building: zone '" + z.id +
                                "' must have positive floor area");
      require(z.height > 0,
              "building: zone '" + z.id + "' must have positive height");
    }
  }
  const int nz = static_cast<int>(zones.size());
  for (const FlowPath& p : paths) {
    require(p.from >= 0 && p.from < nz && p.to >= 0 && p.to < nz,
            "building: path references unknown zone");
    require(p.from != p.to, "building: path endpoints must differ");
    require(p.c > 0, "building: flow coefficient must be positive");
    require(p.n >= 0.5 && p.n <= 1.0,
            "building: flow exponent outside [0.5, 1]");
    require(p.exchange >= 0, "building: exchange flow must be nonnegative");
    if (zones[p.from].outdoor || zones[p.to].outdoor)
      (void)ambient.wind_pressure(p.facade);  // must resolve
  }
  // Every interior zone must reach outdoors through the path graph.
  std::vector<char> reached(zones.size(), 0);
  std::deque<int> queue;
  for (int i = 0; i < nz; ++i)
    if (zones[i].outdoor) {
      reached[i] = 1;
      queue.push_back(i);
    }
  require(!queue.empty(), "building: no outdoor zone");
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    for (const FlowPath& p : paths) {
      const int other = p.from == i ? p.to : (p.to == i ? p.from : -1);
      if (other >= 0 && !reached[other]) {
        reached[other] = 1;
        queue.push_back(other);
      }
    }
  }
  for (int i = 0; i < nz; ++i)
    require(reached[i] == 1, "building: zone '" + zones[i].id +
                                 "' has no path to outdoors");
  for (int s : sensors) {
    require(s >= 0 && s < nz, "building: sensor in unknown zone");
    require(!zones[s].outdoor, "building: sensor cannot be outdoors");
  }
}

BuildingModel load_building(const std::string& path) {
  const nlohmann::json j = jsonio::load_file(path);
  BuildingModel b;
  for (const auto& jz : j.at("zones")) {
    Zone z;
    z.id = jz.at("id").get<std::string>();
    z.outdoor = jz.value("outdoor", false);
    if (!z.outdoor) {
      const auto rect = jz.at("rect");
      require(rect.size() == 4, "building: rect must be [x, y, w, d]");
      z.x0 = rect[0].get<double>();
      z.y0 = rect[1].get<double>();
      z.width = rect[2].get<double>();
      z.depth = rect[3].get<double>();
      z.height = jz.at("height").get<double>();
    }
    b.zones.push_back(std::move(z));
  }
  for (const auto& jp : j.at("paths")) {
    FlowPath p;
    p.from = b.zone_index(jp.at("from").get<std::string>());
    p.to = b.zone_index(jp.at("to").get<std::string>());
    p.c = jp.at("c").get<double>();
    p.n = jp.value("n", 0.5);
    p.facade = jp.value("facade", std::string());
    p.exchange = jp.value("exchange", 0.0);
    b.paths.push_back(std::move(p));
  }
  const auto& ja = j.at("ambient");
  b.ambient.temperature_c = ja.value("temperature_c", 23.0);
  b.ambient.wind_speed = ja.value("wind_speed", 3.6);
  for (const auto& [facade, cp] : ja.at("cp").items())
    b.ambient.cp[facade] = cp.get<double>();
  for (const auto& js : j.at("sensors"))
    b.sensors.push_back(b.zone_index(js.get<std::string>()));
  b.validate();
  return b;
}

void save_building(const BuildingModel& bldg, const std::string& path) {
  nlohmann::json j;
  for (const Zone& z : bldg.zones) {
    nlohmann::json jz;
    jz["id"] = z.id;
    if (z.outdoor) {
      jz["outdoor"] = true;
    } else {
      jz["rect"] = {z.x0, z.y0, z.width, z.depth};
      jz["height"] = z.height;
    }
    j["zones"].push_back(std::move(jz));
  }
  for (const FlowPath& p : bldg.paths) {
    nlohmann::json jp;
    jp["from"] = bldg.zones[p.from].id;
    jp["to"] = bldg.zones[p.to].id;
    jp["c"] = p.c;
    jp["n"] = p.n;
    if (!p.facade.empty()) jp["facade"] = p.facade;
    if (p.exchange > 0) jp["exchange"] = p.exchange;
    j["paths"].push_back(std::move(jp));
  }
  j["ambient"]["temperature_c"] = bldg.ambient.temperature_c;
  j["ambient"]["wind_speed"] = bldg.ambient.wind_speed;
  for (const auto& [facade, cp] : bldg.ambient.cp)
    j["ambient"]["cp"][facade] = cp;
  for (int s : bldg.sensors) j["sensors"].push_back(bldg.zones[s].id);
  jsonio::save_file(j, path);
}

BuildingModel desk_building() {
  BuildingModel b;
  auto zone = [&](const std::string& id, double x0, double y0, double w,
                  double d, double h) {
    Zone z;
    z.id = id;
    z.x0 = x0;
    z.y0 = y0;
    z.width = w;
    z.depth = d;
    z.height = h;
    b.zones.push_back(z);
  };
  zone("R1", 0, 6, 5, 5, 2.5);
  zone("R2", 5, 6, 5, 5, 2.5);
  zone("C1", 0, 4, 5, 2, 2.5);
  zone("C2", 5, 4, 5, 2, 2.5);
  zone("R3", 0, -1, 5, 5, 2.5);
  zone("R4", 5, -1, 5, 5, 2.5);
  Zone out;
  out.id = "OUT";
  out.outdoor = true;
  b.zones.push_back(out);

  auto path = [&](const std::string& from, const std::string& to, double c,
                  const std::string& facade, double exchange) {
    FlowPath p;
    p.from = b.zone_index(from);
    p.to = b.zone_index(to);
    p.c = c;
    p.n = 0.5;
    p.facade = facade;
    p.exchange = exchange;
    b.paths.push_back(p);
  };
  // Windows (partially open) on the windward and leeward facades.
  path("R1", "OUT", 0.25, "W", 0.0);
  path("R3", "OUT", 0.25, "W", 0.0);
  path("R2", "OUT", 0.25, "E", 0.0);
  path("R4", "OUT", 0.25, "E", 0.0);
  // Doors room <-> corridor with two-way turbulent exchange.
  path("R1", "C1", 0.6, "", 0.04);
  path("R3", "C1", 0.6, "", 0.04);
  path("R2", "C2", 0.6, "", 0.04);
  path("R4", "C2", 0.6, "", 0.04);
  // Fully open virtual wall between the corridors.
  path("C1", "C2", 2.5, "", 0.08);

  b.ambient.temperature_c = 23.0;
  b.ambient.wind_speed = 3.6;
  b.ambient.cp = {{"W", 0.6}, {"E", -0.3}, {"N", -0.4}, {"S", -0.4}};
  b.sensors = {b.zone_index("R1"), b.zone_index("R2"), b.zone_index("R3"),
               b.zone_index("R4")};
  b.validate();
  return b;
}

}  // namespace dmgp
