#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "dmgp/airflow.hpp"
#include "dmgp/building.hpp"
#include "dmgp/dbm.hpp"
#include "dmgp/emulator.hpp"
#include "dmgp/errors.hpp"
#include "dmgp/rng.hpp"
#include "dmgp/transport.hpp"

using namespace dmgp;

namespace {

Eigen::VectorXd sigmoid_oracle(const Eigen::VectorXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

DbmParams random_params(int v, int h1, int h2, int c, double scale,
                        std::uint64_t seed) {
  Rng rng(seed);
  DbmParams p;
  p.W1 = scale * rng.normal_matrix(v, h1);
  p.W2 = scale * rng.normal_matrix(h1, h2);
  p.readout = scale * rng.normal_matrix(h2, c);
  return p;
}

Eigen::VectorXd random_bits(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  return v;
}

// Three disjoint 4-bit blocks, one per class, plus noisy distractor bits
// shared by everyone: linearly separable by construction.
DbmDataset block_dataset(int per_class, std::uint64_t seed) {
  const int n_distractor = 4;
  DbmDataset data;
  data.zone_ids = {"A", "B", "C"};
  data.features.times = Eigen::VectorXd::LinSpaced(4, 120, 480);
  data.features.thresholds = Eigen::VectorXd::Constant(4, 0.1);
  const int dim = 3 * 4 + n_distractor;
  data.v.setZero(3 * per_class, dim);
  data.labels.resize(3 * per_class);
  Rng rng(seed);
  int row = 0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < per_class; ++i, ++row) {
      data.labels[row] = c;
      data.v.row(row).segment(4 * c, 4).setOnes();
      for (int d = 0; d < n_distractor; ++d)
        data.v(row, 12 + d) = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
  }
  return data;
}

const DbmDataset& desk_dataset() {
  static const DbmDataset data = [] {
    const BuildingModel b = desk_building();
    const AirflowSolution air = solve_airflows(b);
    return make_activation_dataset(b, air, {0, 1, 2, 3, 4, 5}, 120, 71);
  }();
  return data;
}

struct DeskPrior {
  ZonePriorModel model;
  DbmTrainResult result;
};

const DeskPrior& desk_prior() {
  static const DeskPrior trained = [] {
    DeskPrior out;
    DbmTrainConfig cfg;
    cfg.seed = 5;
    out.model = train_zone_prior_model(desk_dataset(), cfg,
                                       PriorBackend::deep, &out.result);
    return out;
  }();
  return trained;
}

}  // namespace

TEST_CASE("mean field with zero weights is maximally uncertain") {
  DbmParams p;
  p.W1.setZero(6, 4);
  p.W2.setZero(4, 3);
  p.readout.setZero(3, 2);
  const MeanFieldState st = mean_field_infer(p, random_bits(6, 1));
  CHECK(st.mu1.size() == 4);
  CHECK(st.mu2.size() == 3);
  CHECK((st.mu1.array() - 0.5).abs().maxCoeff() == 0.0);
  CHECK((st.mu2.array() - 0.5).abs().maxCoeff() == 0.0);
  CHECK(st.residual == 0.0);
}

TEST_CASE("decoupled second layer solves in one undamped sweep") {
  DbmParams p = random_params(8, 5, 3, 2, 0.8, 2);
  p.W2.setZero();
  const Eigen::VectorXd v = random_bits(8, 3);
  const MeanFieldState st = mean_field_infer(p, v, 50, 1e-12, 0.0);
  const Eigen::VectorXd want = sigmoid_oracle(p.W1.transpose() * v);
  CHECK((st.mu1 - want).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.mu2.array() - 0.5).abs().maxCoeff() == 0.0);
  CHECK(st.iterations <= 2);
  CHECK(st.residual < 1e-12);
}

TEST_CASE("converged mean field satisfies both update equations") {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    const DbmParams p = random_params(10, 8, 6, 3, 0.4, seed);
    const Eigen::VectorXd v = random_bits(10, seed + 100);
    const MeanFieldState st = mean_field_infer(p, v, 2000, 1e-13, 0.5);
    REQUIRE(st.residual < 1e-13);
    const Eigen::VectorXd f1 =
        sigmoid_oracle(p.W1.transpose() * v + p.W2 * st.mu2);
    const Eigen::VectorXd f2 = sigmoid_oracle(p.W2.transpose() * st.mu1);
    CHECK((st.mu1 - f1).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((st.mu2 - f2).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(st.mu1.minCoeff() > 0.0);
    CHECK(st.mu1.maxCoeff() < 1.0);
    CHECK(st.mu2.minCoeff() > 0.0);
    CHECK(st.mu2.maxCoeff() < 1.0);
  }
}

TEST_CASE("mean field residuals never increase under moderate damping") {
  for (double damping : {0.0, 0.25, 0.5}) {
    for (std::uint64_t seed : {7u, 8u, 9u}) {
      const DbmParams p = random_params(12, 9, 5, 3, 0.6, seed);
      const Eigen::VectorXd v = random_bits(12, seed + 200);
      const MeanFieldState st = mean_field_infer(p, v, 300, 1e-12, damping);
      REQUIRE(st.residuals.size() >= 2);
      for (std::size_t i = 1; i < st.residuals.size(); ++i)
        CHECK(st.residuals[i] <= st.residuals[i - 1] + 1e-15);
    }
  }
}

TEST_CASE("probability floor matches the hand calculation") {
  Eigen::VectorXd raw(6);
  raw << 1, 0, 0, 0, 0, 0;
  const Eigen::VectorXd floored = floor_probabilities(raw, 0.01);
  CHECK(floored[0] == doctest::Approx(1.0 / 1.05).epsilon(1e-14));
  for (int i = 1; i < 6; ++i)
    CHECK(floored[i] == doctest::Approx(0.01 / 1.05).epsilon(1e-14));
  CHECK(std::abs(floored.sum() - 1.0) < 1e-12);

  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(6, 1.0 / 6);
  CHECK((floor_probabilities(uniform, 0.01) - uniform).cwiseAbs().maxCoeff() <
        1e-15);
}

TEST_CASE("probability floor keeps distributions proper and ranked") {
  Rng rng(11);
  const double eps = 0.01;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(8));
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p[i] = -std::log(1.0 - rng.uniform());
    p /= p.sum();
    const Eigen::VectorXd f = floor_probabilities(p, eps);
    CHECK(std::abs(f.sum() - 1.0) < 1e-12);
    CHECK(f.minCoeff() >= eps / (1.0 + n * eps) - 1e-15);
    int raw_arg, floored_arg;
    const double raw_max = p.maxCoeff(&raw_arg);
    f.maxCoeff(&floored_arg);
    if (raw_max > 2 * eps) CHECK(floored_arg == raw_arg);
  }
}

TEST_CASE("zone prior is a floored softmax of the readout") {
  const DbmParams p = random_params(9, 6, 4, 5, 0.7, 21);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Eigen::VectorXd v = random_bits(9, 300 + seed);
    const Eigen::VectorXd prior = zone_prior(p, v, 0.01);
    REQUIRE(prior.size() == 5);
    CHECK(std::abs(prior.sum() - 1.0) < 1e-12);
    CHECK(prior.minCoeff() > 0.0);
    CHECK(prior.minCoeff() >= 0.01 / (1.0 + 5 * 0.01) - 1e-15);
    // eps = 0 exposes the raw softmax; flooring it must reproduce the
    // served prior exactly.
    const Eigen::VectorXd raw = zone_prior(p, v, 0.0);
    CHECK(std::abs(raw.sum() - 1.0) < 1e-12);
    CHECK((floor_probabilities(raw, 0.01) - prior).cwiseAbs().maxCoeff() <
          1e-14);
  }
}

TEST_CASE("activation pattern binarizes sensor series against thresholds") {
  ActivationConfig cfg;
  cfg.times = Eigen::VectorXd::LinSpaced(2, 120, 240);
  cfg.thresholds.resize(2);
  cfg.thresholds << 0.1, 0.2;

  std::vector<SensorRecord> recs(2);
  recs[0].zone = 0;
  recs[0].times = Eigen::VectorXd::LinSpaced(3, 120, 360);
  recs[0].raw.resize(3);
  recs[0].raw << 0.05, 0.15, 0.3;
  recs[1].zone = 1;
  recs[1].times = recs[0].times;
  recs[1].raw.resize(3);
  recs[1].raw << 0.25, 0.1, 0.0;

  const Eigen::VectorXd v = activation_pattern(recs, cfg);
  REQUIRE(v.size() == 4);
  Eigen::VectorXd want(4);
  want << 0, 1, 1, 0;  // sensor-major, time within sensor
  CHECK((v - want).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("readout training separates a block pattern task completely") {
  const DbmDataset data = block_dataset(60, 31);
  DbmTrainConfig cfg;
  cfg.hidden1 = 16;
  cfg.hidden2 = 8;
  cfg.seed = 13;
  DbmTrainResult res;
  const DbmParams params = train_dbm(data, cfg, &res);
  CHECK(res.train_accuracy == 1.0);
  CHECK(res.holdout_accuracy == 1.0);
  CHECK(!res.low_accuracy);
  REQUIRE(res.readout_trace.size() >= 2);
  CHECK(res.readout_trace.back() > res.readout_trace.front());

  // The trained prior concentrates on the right block for a clean
  // prototype of each class.
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd proto = Eigen::VectorXd::Zero(16);
    proto.segment(4 * c, 4).setOnes();
    const Eigen::VectorXd prior = zone_prior(params, proto);
    int arg;
    prior.maxCoeff(&arg);
    CHECK(arg == c);
  }
}

TEST_CASE("shuffled labels collapse to chance and raise the warning flag") {
  DbmDataset data = block_dataset(120, 41);
  Rng rng(42);
  for (int i = static_cast<int>(data.labels.size()) - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(i + 1));
    std::swap(data.labels[i], data.labels[j]);
  }
  DbmTrainConfig cfg;
  cfg.hidden1 = 16;
  cfg.hidden2 = 8;
  cfg.seed = 43;
  DbmTrainResult res;
  CHECK_NOTHROW(train_dbm(data, cfg, &res));
  CHECK(res.holdout_accuracy > 0.1);
  CHECK(res.holdout_accuracy < 0.6);
  CHECK(res.low_accuracy);
}

TEST_CASE("training rejects zones with fewer than ten examples") {
  DbmDataset data = block_dataset(10, 51);
  DbmTrainConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  cfg.seed = 52;
  CHECK_NOTHROW(train_dbm(data, cfg));

  // Drop one example of class 0: now 9 < 10.
  DbmDataset thin = data;
  thin.v = data.v.bottomRows(data.v.rows() - 1);
  thin.labels = data.labels.tail(data.labels.size() - 1);
  CHECK_THROWS_AS(train_dbm(thin, cfg), ContractViolation);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const DbmDataset data = block_dataset(40, 61);
  DbmTrainConfig cfg;
  cfg.hidden1 = 12;
  cfg.hidden2 = 6;
  cfg.seed = 62;
  const DbmParams a = train_dbm(data, cfg);
  const DbmParams b = train_dbm(data, cfg);
  CHECK((a.W1 - b.W1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.W2 - b.W2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.readout - b.readout).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("desk activation dataset looks sane") {
  const DbmDataset& data = desk_dataset();
  REQUIRE(data.zone_ids.size() == 6);
  CHECK(data.zone_ids[0] == "R1");
  CHECK(data.v.rows() == 720);
  CHECK(data.v.cols() == 12);  // four sensors, three reads up to 6 min
  CHECK(((data.v.array() == 0.0) || (data.v.array() == 1.0)).all());
  CHECK(data.noise_sd.size() == 4);
  CHECK(data.noise_sd.minCoeff() > 0.0);
  // Every class is present with the requested count.
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(6);
  for (int i = 0; i < data.labels.size(); ++i) counts[data.labels[i]]++;
  CHECK(counts.minCoeff() == 120);
  // Patterns carry signal: the column means are neither all dead nor all
  // saturated.
  const Eigen::VectorXd col_mean = data.v.colwise().mean();
  CHECK(col_mean.maxCoeff() > 0.2);
  CHECK(col_mean.minCoeff() < 0.8);
}

TEST_CASE("desk classifier reaches the held-out accuracy contract") {
  const DeskPrior& trained = desk_prior();
  CHECK(trained.result.holdout_accuracy >= 0.95);
  CHECK(!trained.result.low_accuracy);
  CHECK(trained.model.holdout_accuracy == trained.result.holdout_accuracy);
}

TEST_CASE("desk classifier pins a fresh source to its zone") {
  const BuildingModel b = desk_building();
  const AirflowSolution air = solve_airflows(b);
  const DbmDataset& data = desk_dataset();
  const ZonePriorModel& model = desk_prior().model;

  SourceScenario sc;
  sc.zone = b.zone_index("R1");
  sc.locations = {{2.2, 8.4}};
  const TransportResult r =
      simulate_transport(b, air, sc, default_observation_times());
  const auto recs = sense(r, b, data.noise_sd, 909);
  const Eigen::VectorXd prior = zone_prior(model, recs);
  REQUIRE(prior.size() == 6);
  int arg;
  const double top = prior.maxCoeff(&arg);
  CHECK(model.zone_ids[arg] == "R1");
  CHECK(top > 0.5);
  CHECK(std::abs(prior.sum() - 1.0) < 1e-12);
}

TEST_CASE("zone prior model survives a save and load round trip") {
  const DbmDataset data = block_dataset(40, 81);
  DbmTrainConfig cfg;
  cfg.hidden1 = 12;
  cfg.hidden2 = 6;
  cfg.seed = 82;
  const ZonePriorModel model = train_zone_prior_model(data, cfg);

  const std::string path = "zone_prior_roundtrip_test.json";
  save_zone_prior(model, path);
  const ZonePriorModel back = load_zone_prior(path);
  std::filesystem::remove(path);

  CHECK(back.backend == model.backend);
  CHECK(back.zone_ids == model.zone_ids);
  CHECK((back.features.times - model.features.times).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((back.features.thresholds - model.features.thresholds)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((back.params.W1 - model.params.W1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.params.W2 - model.params.W2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.params.readout - model.params.readout).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(back.holdout_accuracy == model.holdout_accuracy);

  const Eigen::VectorXd v = random_bits(16, 83);
  CHECK((zone_prior(back.params, v) - zone_prior(model.params, v))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("logistic fallback serves the same contract on the desk task") {
  DbmTrainConfig cfg;
  cfg.seed = 91;
  DbmTrainResult res;
  const ZonePriorModel model = train_zone_prior_model(
      desk_dataset(), cfg, PriorBackend::logistic, &res);
  CHECK(model.backend == PriorBackend::logistic);
  CHECK(res.holdout_accuracy >= 0.95);

  const std::string path = "zone_prior_logistic_test.json";
  save_zone_prior(model, path);
  const ZonePriorModel back = load_zone_prior(path);
  std::filesystem::remove(path);
  CHECK(back.backend == PriorBackend::logistic);
  CHECK((back.linear - model.linear).cwiseAbs().maxCoeff() == 0.0);

  // Same inference interface, same flooring behaviour.
  const BuildingModel b = desk_building();
  const AirflowSolution air = solve_airflows(b);
  SourceScenario sc;
  sc.zone = b.zone_index("R4");
  sc.locations = {{7.9, 1.3}};
  const TransportResult r =
      simulate_transport(b, air, sc, default_observation_times());
  const auto recs = sense(r, b, desk_dataset().noise_sd, 911);
  const Eigen::VectorXd prior = zone_prior(back, recs);
  REQUIRE(prior.size() == 6);
  CHECK(std::abs(prior.sum() - 1.0) < 1e-12);
  CHECK(prior.minCoeff() >= 0.01 / (1.0 + 6 * 0.01) - 1e-15);
  int arg;
  prior.maxCoeff(&arg);
  CHECK(back.zone_ids[arg] == "R4");
}
