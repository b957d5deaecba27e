#include "dmgp/emulator.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <tuple>

#include "dmgp/airflow.hpp"
#include "dmgp/checkpoint.hpp"
#include "dmgp/cholesky.hpp"
#include "dmgp/errors.hpp"
#include "json_io.hpp"

namespace dmgp {

bool operator<(const EmulatorKey& a, const EmulatorKey& b) {
  return std::tie(a.zone, a.count, a.sensor) <
         std::tie(b.zone, b.count, b.sensor);
}

bool operator==(const EmulatorKey& a, const EmulatorKey& b) {
  return std::tie(a.zone, a.count, a.sensor) ==
         std::tie(b.zone, b.count, b.sensor);
}

Eigen::VectorXd default_observation_times() {
  Eigen::VectorXd t(9);
  for (int i = 0; i < 9; ++i) t[i] = 120.0 * (i + 1);
  return t;
}

int default_design_count(const BuildingModel& bldg, int zone) {
  require(zone >= 0 && zone < bldg.n_zones() && !bldg.zones[zone].outdoor,
          "design count: bad zone");
  double total = 0;
  for (const Zone& z : bldg.zones)
    if (!z.outdoor) total += z.area();
  const double raw = 10000.0 * bldg.zones[zone].area() / total;
  return std::clamp(static_cast<int>(std::lround(raw)), 100, 400);
}

namespace {

std::uint64_t key_mix(int zone, int count, int sensor) {
  return (static_cast<std::uint64_t>(zone) << 32) |
         (static_cast<std::uint64_t>(count) << 16) |
         static_cast<std::uint64_t>(sensor);
}

std::string key_file(const BuildingModel& bldg, const EmulatorKey& k) {
  std::ostringstream name;
  name << "z" << bldg.zones[k.zone].id << "_n" << k.count << "_s"
       << bldg.zones[k.sensor].id << ".model.json";
  return name.str();
}

}  // namespace

EmulatorBank train_bank(const BuildingModel& bldg, const EmulatorConfig& cfg) {
  bldg.validate();
  require(cfg.max_sources >= 1 && cfg.max_sources <= 3,
          "train_bank: source count must be between 1 and 3");
  require(cfg.holdout_fraction >= 0 && cfg.holdout_fraction < 1,
          "train_bank: bad holdout fraction");

  std::vector<int> zones;
  if (cfg.zones.empty()) {
    for (Eigen::Index z = 0; z < bldg.n_zones(); ++z)
      if (!bldg.zones[z].outdoor) zones.push_back(static_cast<int>(z));
  } else {
    for (const std::string& id : cfg.zones) zones.push_back(bldg.zone_index(id));
  }

  EmulatorBank bank;
  bank.building = bldg;
  bank.times = cfg.times.size() ? cfg.times : default_observation_times();
  bank.max_sources = cfg.max_sources;

  const AirflowSolution airflow = solve_airflows(bldg);
  for (int zone : zones) {
    const Zone& z = bldg.zones[zone];
    const auto it = cfg.design_counts.find(z.id);
    const int n_design = it != cfg.design_counts.end()
                             ? it->second
                             : default_design_count(bldg, zone);
    require(n_design >= 2, "train_bank: need at least 2 design points");

    for (int count = 1; count <= cfg.max_sources; ++count) {
      Rng rng(derive_seed(cfg.seed, "design", key_mix(zone, count, 0)));
      const Eigen::MatrixXd u = latin_hypercube(n_design, 2 * count, rng);
      std::vector<std::vector<Eigen::Vector2d>> design(n_design);
      for (int i = 0; i < n_design; ++i)
        for (int s = 0; s < count; ++s)
          design[i].push_back({z.x0 + u(i, 2 * s) * z.width,
                               z.y0 + u(i, 2 * s + 1) * z.depth});
      const TrainingSet ts =
          generate_training_set(bldg, airflow, zone, count, design,
                                bank.times, cfg.rate, cfg.duration,
                                cfg.transport);

      const Eigen::Index n_hold = static_cast<Eigen::Index>(
          std::lround(cfg.holdout_fraction * n_design));
      const Eigen::Index n_train = n_design - n_hold;
      for (std::size_t j = 0; j < bldg.sensors.size(); ++j) {
        const EmulatorKey key{zone, count, bldg.sensors[j]};
        const Eigen::MatrixXd xtr = ts.x.topRows(n_train);

        EmulatorRecord rec;
        rec.design_count = n_design;
        rec.train_rows = n_train;
        rec.output_range = ts.y[j].maxCoeff() - ts.y[j].minCoeff();
        rec.y_mean = ts.y[j].topRows(n_train).mean();
        rec.y_scale = std::max(
            std::sqrt((ts.y[j].topRows(n_train).array() - rec.y_mean)
                          .square()
                          .mean()),
            1e-6);
        const Eigen::MatrixXd ytr =
            (ts.y[j].topRows(n_train).array() - rec.y_mean) / rec.y_scale;

        rec.model = build_model(
            xtr, bank.times.size(), cfg.n_layers, cfg.m_inducing,
            cfg.hidden_width, cfg.k_train, cfg.k_pred,
            derive_seed(cfg.seed, "train",
                        key_mix(zone, count, key.sensor)));
        TrainConfig tc;
        tc.max_iterations = cfg.iterations;
        tc.adam.step = cfg.step;
        const TrainResult res = train(rec.model, xtr, ytr, tc);
        rec.final_bound = res.trace.empty() ? 0 : res.trace.back();
        if (res.diverged) bank.failed.push_back(key);
        bank.models.emplace(key, std::move(rec));

        if (n_hold > 0) {
          double sse = 0, z2 = 0;
          for (Eigen::Index i = n_train; i < n_design; ++i) {
            const PredictiveGaussian pg =
                emulate(bank, key, ts.x.row(i).transpose());
            const Eigen::VectorXd r =
                pg.mean - ts.y[j].row(i).transpose();
            sse += r.squaredNorm();
            z2 += (r.array().square() / pg.cov.diagonal().array()).sum();
          }
          EmulatorRecord& stored = bank.models.at(key);
          stored.holdout_rmse =
              std::sqrt(sse / double(n_hold * bank.times.size()));
          stored.calibration =
              std::max(1.0, z2 / double(n_hold * bank.times.size()));
        }
      }
    }
  }
  return bank;
}

const EmulatorRecord& bank_entry(const EmulatorBank& bank,
                                 const EmulatorKey& key) {
  const auto it = bank.models.find(key);
  if (it == bank.models.end()) {
    std::ostringstream msg;
    msg << "bank: no emulator for zone '" << bank.building.zones[key.zone].id
        << "', " << key.count << " source(s), sensor '"
        << bank.building.zones[key.sensor].id << "'";
    throw ContractViolation(msg.str());
  }
  return it->second;
}

PredictiveGaussian emulate(const EmulatorBank& bank, const EmulatorKey& key,
                           const Eigen::VectorXd& x) {
  const EmulatorRecord& rec = bank_entry(bank, key);
  require(x.size() == 2 * key.count,
          "emulate: coordinate count does not match the source count");
  require(x.minCoeff() >= -1 - 1e-9 && x.maxCoeff() <= 1 + 1e-9,
          "emulate: normalized coordinates must lie in [-1,1]");
  PredictiveGaussian pg = rec.model.predict(x);
  const double s2 = rec.y_scale * rec.y_scale;
  pg.mean = rec.y_scale * pg.mean.array() + rec.y_mean;
  pg.cov = s2 * pg.cov;
  pg.cov.diagonal().array() += s2 * rec.model.sigma_y2;
  pg.cov *= rec.calibration;
  return pg;
}

double log_likelihood(const EmulatorBank& bank, int zone, int count,
                      const Eigen::VectorXd& x,
                      const std::map<int, Eigen::VectorXd>& observed) {
  Eigen::Index w = -1;
  for (int s : bank.building.sensors) {
    const auto it = observed.find(s);
    require(it != observed.end(), "log_likelihood: missing observation for "
                                  "sensor '" +
                                      bank.building.zones[s].id + "'");
    if (w < 0) w = it->second.size();
    require(it->second.size() == w,
            "log_likelihood: observation windows differ across sensors");
  }
  require(w >= 1 && w <= bank.times.size(),
          "log_likelihood: observation window does not fit the emulator "
          "time grid");

  double total = 0;
  for (int s : bank.building.sensors) {
    const PredictiveGaussian pg = emulate(bank, {zone, count, s}, x);
    const Eigen::VectorXd mu = pg.mean.head(w);
    const Eigen::MatrixXd om = pg.cov.topLeftCorner(w, w);
    const CholeskyFactor f = cholesky(om);
    const Eigen::VectorXd r = solve_lower(f.lower, observed.at(s) - mu);
    total += -0.5 * (double(w) * std::log(2.0 * M_PI) +
                     2.0 * f.lower.diagonal().array().log().sum() +
                     r.squaredNorm());
  }
  return total;
}

void save_bank(const EmulatorBank& bank, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["times"] = jsonio::from_vector(bank.times);
  manifest["max_sources"] = bank.max_sources;
  nlohmann::json bounds;
  for (const auto& [key, rec] : bank.models) {
    const Zone& z = bank.building.zones[key.zone];
    bounds[z.id] = {z.x0, z.y0, z.width, z.depth};
  }
  manifest["zone_bounds"] = bounds;

  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [key, rec] : bank.models) {
    const std::string file = key_file(bank.building, key);
    save_model(rec.model, (fs::path(dir) / file).string());
    nlohmann::json e;
    e["zone"] = bank.building.zones[key.zone].id;
    e["count"] = key.count;
    e["sensor"] = bank.building.zones[key.sensor].id;
    e["file"] = file;
    e["final_bound"] = rec.final_bound;
    e["y_mean"] = rec.y_mean;
    e["y_scale"] = rec.y_scale;
    e["calibration"] = rec.calibration;
    e["holdout_rmse"] = rec.holdout_rmse;
    e["output_range"] = rec.output_range;
    e["design_count"] = rec.design_count;
    e["train_rows"] = rec.train_rows;
    entries.push_back(std::move(e));
  }
  manifest["entries"] = std::move(entries);

  nlohmann::json failed = nlohmann::json::array();
  for (const EmulatorKey& key : bank.failed) {
    failed.push_back({{"zone", bank.building.zones[key.zone].id},
                      {"count", key.count},
                      {"sensor", bank.building.zones[key.sensor].id}});
  }
  manifest["failed"] = std::move(failed);
  jsonio::save_file(manifest, (fs::path(dir) / "manifest.json").string());
}

EmulatorBank load_bank(const BuildingModel& bldg, const std::string& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest =
      jsonio::load_file((fs::path(dir) / "manifest.json").string());
  require(manifest.at("schema_version").get<int>() == 1,
          "bank: unsupported manifest schema");

  EmulatorBank bank;
  bank.building = bldg;
  bank.times = jsonio::to_vector(manifest.at("times"));
  bank.max_sources = manifest.at("max_sources").get<int>();

  for (const auto& [id, b] : manifest.at("zone_bounds").items()) {
    const Zone& z = bldg.zones[bldg.zone_index(id)];
    require(z.x0 == b.at(0).get<double>() && z.y0 == b.at(1).get<double>() &&
                z.width == b.at(2).get<double>() &&
                z.depth == b.at(3).get<double>(),
            "bank: zone '" + id +
                "' geometry differs from the training-time building; "
                "normalization would be inconsistent");
  }

  for (const auto& e : manifest.at("entries")) {
    EmulatorKey key;
    key.zone = bldg.zone_index(e.at("zone").get<std::string>());
    key.count = e.at("count").get<int>();
    key.sensor = bldg.zone_index(e.at("sensor").get<std::string>());
    EmulatorRecord rec;
    rec.model =
        load_model((fs::path(dir) / e.at("file").get<std::string>()).string());
    rec.final_bound = e.at("final_bound").get<double>();
    rec.y_mean = e.at("y_mean").get<double>();
    rec.y_scale = e.at("y_scale").get<double>();
    rec.calibration = e.at("calibration").get<double>();
    rec.holdout_rmse = e.at("holdout_rmse").get<double>();
    rec.output_range = e.at("output_range").get<double>();
    rec.design_count = e.at("design_count").get<Eigen::Index>();
    rec.train_rows = e.at("train_rows").get<Eigen::Index>();
    bank.models.emplace(key, std::move(rec));
  }
  for (const auto& f : manifest.at("failed")) {
    bank.failed.push_back(
        {bldg.zone_index(f.at("zone").get<std::string>()),
         f.at("count").get<int>(),
         bldg.zone_index(f.at("sensor").get<std::string>())});
  }
  return bank;
}

}  // namespace dmgp
