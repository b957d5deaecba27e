#include "dmgp/dbm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dmgp/emulator.hpp"
#include "dmgp/errors.hpp"
#include "dmgp/model.hpp"
#include "dmgp/rng.hpp"
#include "json_io.hpp"

namespace dmgp {
namespace {

// Keep unit activations strictly inside (0, 1); only binds for inputs
// beyond +-27 or so, far outside any trained weight scale.
constexpr double kUnitEps = 1e-12;

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp()))
      .max(kUnitEps)
      .min(1.0 - kUnitEps)
      .matrix();
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp()))
      .max(kUnitEps)
      .min(1.0 - kUnitEps)
      .matrix();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& s) {
  const Eigen::ArrayXd e = (s.array() - s.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

// One-step contrastive divergence for a bias-free restricted Boltzmann
// machine.  Visible data may be real-valued in [0, 1] (the deeper layer
// trains on the shallow layer's activation probabilities).  The positive
// phase pairs data with hidden probabilities; only the reconstruction is
// driven by a sampled hidden state.
Eigen::MatrixXd train_rbm(const Eigen::MatrixXd& v, int hidden, int epochs,
                          double step, Rng& rng) {
  const double n = static_cast<double>(v.rows());
  Eigen::MatrixXd w = 0.01 * rng.normal_matrix(v.cols(), hidden);
  for (int e = 0; e < epochs; ++e) {
    const Eigen::MatrixXd ph = sigmoid(Eigen::MatrixXd(v * w));
    Eigen::MatrixXd h(ph.rows(), ph.cols());
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      for (Eigen::Index j = 0; j < h.cols(); ++j)
        h(i, j) = rng.uniform() < ph(i, j) ? 1.0 : 0.0;
    const Eigen::MatrixXd vr = sigmoid(Eigen::MatrixXd(h * w.transpose()));
    const Eigen::MatrixXd phr = sigmoid(Eigen::MatrixXd(vr * w));
    w += (step / n) * (v.transpose() * ph - vr.transpose() * phr);
  }
  return w;
}

// Multinomial logistic head fit by Adam ascent on the mean
// log-likelihood; convex for fixed features.
Eigen::MatrixXd fit_softmax_head(const Eigen::MatrixXd& f,
                                 const Eigen::VectorXi& labels, int n_classes,
                                 int iterations, double step,
                                 std::vector<double>* trace) {
  const double n = static_cast<double>(f.rows());
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(f.rows(), n_classes);
  for (Eigen::Index i = 0; i < labels.size(); ++i) onehot(i, labels[i]) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(f.cols(), n_classes);
  Eigen::MatrixXd m1 = w, m2 = w;
  AdamConfig adam;
  adam.step = step;
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd s = f * w;
    s.colwise() -= s.rowwise().maxCoeff();
    Eigen::MatrixXd p = s.array().exp().matrix();
    p.array().colwise() /= p.rowwise().sum().array();
    if (trace)
      trace->push_back(
          (onehot.array() * p.array().log()).rowwise().sum().mean());
    const Eigen::MatrixXd grad = f.transpose() * (onehot - p) / n;
    m1 = adam.beta1 * m1 + (1 - adam.beta1) * grad;
    m2 = adam.beta2 * m2 +
         (1 - adam.beta2) * grad.array().square().matrix();
    const double c1 = 1 - std::pow(adam.beta1, it + 1);
    const double c2 = 1 - std::pow(adam.beta2, it + 1);
    w.array() += adam.step * (m1.array() / c1) /
                 ((m2.array() / c2).sqrt() + adam.epsilon);
  }
  return w;
}

double head_accuracy(const Eigen::MatrixXd& f, const Eigen::MatrixXd& w,
                     const Eigen::VectorXi& labels,
                     const std::vector<int>& rows) {
  if (rows.empty()) return 0.0;
  int hits = 0;
  for (int r : rows) {
    Eigen::Index arg = 0;
    (f.row(r) * w).maxCoeff(&arg);
    if (arg == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

struct SplitIdx {
  std::vector<int> train, holdout;
};

// Per-class shuffle, first slice held out; class balance survives the
// split exactly.
SplitIdx stratified_split(const Eigen::VectorXi& labels, int n_classes,
                          double frac, std::uint64_t seed) {
  std::vector<std::vector<int>> per_class(n_classes);
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    per_class[labels[i]].push_back(static_cast<int>(i));
  SplitIdx out;
  Rng rng(seed);
  for (int c = 0; c < n_classes; ++c) {
    auto& idx = per_class[c];
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
    const auto n_hold =
        frac > 0 ? std::max<std::size_t>(
                       1, static_cast<std::size_t>(
                              std::lround(frac * static_cast<double>(idx.size()))))
                 : std::size_t{0};
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_hold ? out.holdout : out.train).push_back(idx[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.holdout.begin(), out.holdout.end());
  return out;
}

Eigen::VectorXi validate_dataset(const DbmDataset& data) {
  const int n_classes = static_cast<int>(data.zone_ids.size());
  require(n_classes >= 2, "train_dbm: need at least two zones");
  require(data.v.rows() > 0 && data.v.rows() == data.labels.size(),
          "train_dbm: examples and labels disagree");
  require(data.v.allFinite() && data.v.minCoeff() >= 0 &&
              data.v.maxCoeff() <= 1,
          "train_dbm: visible entries must lie in [0, 1]");
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_classes);
  for (Eigen::Index i = 0; i < data.labels.size(); ++i) {
    require(data.labels[i] >= 0 && data.labels[i] < n_classes,
            "train_dbm: label out of range");
    counts[data.labels[i]]++;
  }
  require(counts.minCoeff() >= 10,
          "train_dbm: need at least 10 examples per zone");
  return counts;
}

}  // namespace

MeanFieldState mean_field_infer(const DbmParams& params,
                                const Eigen::VectorXd& v, int iters,
                                double tol, double damping) {
  require(params.W1.allFinite() && params.W2.allFinite(),
          "mean field: weights must be finite");
  require(params.W1.rows() == v.size(), "mean field: visible size mismatch");
  require(params.W1.cols() == params.W2.rows() && params.W1.cols() > 0 &&
              params.W2.cols() > 0,
          "mean field: layer dims inconsistent");
  require(v.allFinite(), "mean field: visible vector must be finite");
  require(iters >= 1, "mean field: need at least one sweep");
  require(tol >= 0, "mean field: negative tolerance");
  require(damping >= 0 && damping < 1, "mean field: damping must be in [0, 1)");

  MeanFieldState st;
  st.mu1 = Eigen::VectorXd::Constant(params.W1.cols(), 0.5);
  st.mu2 = Eigen::VectorXd::Constant(params.W2.cols(), 0.5);
  const Eigen::VectorXd drive = params.W1.transpose() * v;
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd t1 = sigmoid(Eigen::VectorXd(drive + params.W2 * st.mu2));
    const Eigen::VectorXd n1 = (1.0 - damping) * t1 + damping * st.mu1;
    double delta = (n1 - st.mu1).cwiseAbs().maxCoeff();
    st.mu1 = n1;
    const Eigen::VectorXd t2 =
        sigmoid(Eigen::VectorXd(params.W2.transpose() * st.mu1));
    const Eigen::VectorXd n2 = (1.0 - damping) * t2 + damping * st.mu2;
    delta = std::max(delta, (n2 - st.mu2).cwiseAbs().maxCoeff());
    st.mu2 = n2;
    st.residuals.push_back(delta);
    st.residual = delta;
    st.iterations = it + 1;
    if (delta < tol) break;
  }
  return st;
}

Eigen::VectorXd floor_probabilities(const Eigen::VectorXd& p, double eps) {
  require(p.size() > 0, "floor: empty distribution");
  require(eps >= 0, "floor: negative floor");
  require(p.allFinite() && p.minCoeff() >= 0,
          "floor: entries must be nonnegative");
  const Eigen::VectorXd f = p.cwiseMax(eps);
  return f / f.sum();
}

Eigen::VectorXd zone_prior(const DbmParams& params, const Eigen::VectorXd& v,
                           double eps) {
  require(params.readout.rows() == params.W2.cols(),
          "zone prior: readout rows must match the deep layer");
  require(params.readout.allFinite() && params.readout.cols() > 0,
          "zone prior: readout must be finite and nonempty");
  const MeanFieldState st = mean_field_infer(params, v);
  return floor_probabilities(softmax(params.readout.transpose() * st.mu2),
                             eps);
}

Eigen::VectorXd activation_pattern(const std::vector<SensorRecord>& sensors,
                                   const ActivationConfig& cfg) {
  const auto n_sensors = static_cast<Eigen::Index>(sensors.size());
  require(n_sensors > 0 && n_sensors == cfg.thresholds.size(),
          "activation: one threshold per sensor");
  require(cfg.times.size() > 0, "activation: no read times");
  Eigen::VectorXd v(n_sensors * cfg.times.size());
  for (Eigen::Index j = 0; j < n_sensors; ++j) {
    const SensorRecord& rec = sensors[j];
    require(rec.times.size() > 0 && rec.times.size() == rec.raw.size(),
            "activation: malformed sensor record");
    for (Eigen::Index k = 0; k < cfg.times.size(); ++k) {
      Eigen::Index best = 0;
      (rec.times.array() - cfg.times[k]).abs().minCoeff(&best);
      require(std::abs(rec.times[best] - cfg.times[k]) < 0.5,
              "activation: sensor series does not cover a read time");
      v[j * cfg.times.size() + k] =
          rec.raw[best] > cfg.thresholds[j] ? 1.0 : 0.0;
    }
  }
  return v;
}

DbmDataset make_activation_dataset(const BuildingModel& bldg,
                                   const AirflowSolution& airflow,
                                   const std::vector<int>& zones,
                                   int per_zone, std::uint64_t seed,
                                   double threshold_fraction,
                                   double noise_fraction, double horizon) {
  require(!zones.empty(), "activation dataset: no zones");
  require(per_zone >= 1, "activation dataset: per_zone must be positive");
  require(threshold_fraction > 0 && noise_fraction >= 0,
          "activation dataset: bad peak fractions");
  require(!bldg.sensors.empty(), "activation dataset: building has no sensors");

  const Eigen::VectorXd all_times = default_observation_times();
  std::vector<double> keep;
  for (Eigen::Index i = 0; i < all_times.size(); ++i)
    if (all_times[i] <= horizon + 1e-9) keep.push_back(all_times[i]);
  require(!keep.empty(), "activation dataset: horizon excludes every read");

  DbmDataset data;
  data.features.times = Eigen::Map<const Eigen::VectorXd>(
      keep.data(), static_cast<Eigen::Index>(keep.size()));
  for (int z : zones) {
    require(z >= 0 && z < bldg.n_zones() && !bldg.zones[z].outdoor,
            "activation dataset: bad zone index");
    data.zone_ids.push_back(bldg.zones[z].id);
  }

  // Simulate the whole corpus first: alarm levels and sensor noise are
  // fractions of each sensor's peak across all runs.
  std::vector<TransportResult> runs;
  runs.reserve(zones.size() * static_cast<std::size_t>(per_zone));
  data.labels.resize(static_cast<Eigen::Index>(zones.size()) * per_zone);
  Eigen::Index row = 0;
  for (std::size_t ci = 0; ci < zones.size(); ++ci) {
    const Zone& zn = bldg.zones[zones[ci]];
    Rng rng(derive_seed(seed, "zone-prior-design",
                        static_cast<std::uint64_t>(zones[ci])));
    const Eigen::MatrixXd u = latin_hypercube(per_zone, 2, rng);
    for (int i = 0; i < per_zone; ++i, ++row) {
      SourceScenario sc;
      sc.zone = zones[ci];
      sc.locations = {{zn.x0 + u(i, 0) * zn.width, zn.y0 + u(i, 1) * zn.depth}};
      runs.push_back(simulate_transport(bldg, airflow, sc, all_times));
      data.labels[row] = static_cast<int>(ci);
    }
  }

  const auto n_sensors = static_cast<Eigen::Index>(bldg.sensors.size());
  Eigen::VectorXd peak = Eigen::VectorXd::Zero(n_sensors);
  for (const TransportResult& r : runs)
    for (Eigen::Index j = 0; j < n_sensors; ++j)
      peak[j] = std::max(peak[j], r.observed.col(bldg.sensors[j]).maxCoeff());
  require(peak.minCoeff() > 0, "activation dataset: a sensor never responds");
  data.features.thresholds = threshold_fraction * peak;
  data.noise_sd = noise_fraction * peak;

  data.v.resize(static_cast<Eigen::Index>(runs.size()),
                n_sensors * data.features.times.size());
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto recs = sense(runs[r], bldg, data.noise_sd,
                            derive_seed(seed, "zone-prior-noise", r));
    data.v.row(static_cast<Eigen::Index>(r)) =
        activation_pattern(recs, data.features).transpose();
  }
  return data;
}

DbmParams train_dbm(const DbmDataset& data, const DbmTrainConfig& cfg,
                    DbmTrainResult* result) {
  const Eigen::VectorXi counts = validate_dataset(data);
  const int n_classes = static_cast<int>(counts.size());
  require(cfg.hidden1 >= 1 && cfg.hidden2 >= 1,
          "train_dbm: hidden layers must be nonempty");
  require(cfg.pretrain_epochs >= 0 && cfg.readout_iterations >= 1,
          "train_dbm: bad iteration counts");
  require(cfg.holdout_fraction >= 0 && cfg.holdout_fraction < 1,
          "train_dbm: holdout fraction must be in [0, 1)");

  const SplitIdx split =
      stratified_split(data.labels, n_classes, cfg.holdout_fraction,
                       derive_seed(cfg.seed, "zone-prior-split"));
  Eigen::MatrixXd vtr(static_cast<Eigen::Index>(split.train.size()),
                      data.v.cols());
  Eigen::VectorXi ltr(static_cast<Eigen::Index>(split.train.size()));
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    vtr.row(static_cast<Eigen::Index>(i)) = data.v.row(split.train[i]);
    ltr[static_cast<Eigen::Index>(i)] = data.labels[split.train[i]];
  }

  DbmParams params;
  Rng rng(derive_seed(cfg.seed, "zone-prior-pretrain"));
  params.W1 =
      train_rbm(vtr, cfg.hidden1, cfg.pretrain_epochs, cfg.pretrain_step, rng);
  const Eigen::MatrixXd p1 = sigmoid(Eigen::MatrixXd(vtr * params.W1));
  params.W2 =
      train_rbm(p1, cfg.hidden2, cfg.pretrain_epochs, cfg.pretrain_step, rng);

  // Mean-field deep activations for every example; the head never sees
  // the holdout rows during its fit.
  Eigen::MatrixXd f(data.v.rows(), cfg.hidden2);
  for (Eigen::Index i = 0; i < data.v.rows(); ++i)
    f.row(i) = mean_field_infer(params, data.v.row(i).transpose(),
                                cfg.mean_field_iters, cfg.mean_field_tol,
                                cfg.damping)
                   .mu2.transpose();
  Eigen::MatrixXd ftr(static_cast<Eigen::Index>(split.train.size()), f.cols());
  for (std::size_t i = 0; i < split.train.size(); ++i)
    ftr.row(static_cast<Eigen::Index>(i)) = f.row(split.train[i]);

  DbmTrainResult res;
  params.readout = fit_softmax_head(ftr, ltr, n_classes,
                                    cfg.readout_iterations, cfg.readout_step,
                                    &res.readout_trace);

  res.train_accuracy = head_accuracy(f, params.readout, data.labels,
                                     split.train);
  res.holdout_accuracy =
      split.holdout.empty()
          ? res.train_accuracy
          : head_accuracy(f, params.readout, data.labels, split.holdout);
  res.low_accuracy = res.holdout_accuracy < cfg.min_holdout_accuracy;
  if (result) *result = std::move(res);
  return params;
}

ZonePriorModel train_zone_prior_model(const DbmDataset& data,
                                      const DbmTrainConfig& cfg,
                                      PriorBackend backend,
                                      DbmTrainResult* result) {
  ZonePriorModel model;
  model.backend = backend;
  model.zone_ids = data.zone_ids;
  model.features = data.features;

  DbmTrainResult res;
  if (backend == PriorBackend::deep) {
    model.params = train_dbm(data, cfg, &res);
  } else {
    const Eigen::VectorXi counts = validate_dataset(data);
    const int n_classes = static_cast<int>(counts.size());
    const SplitIdx split =
        stratified_split(data.labels, n_classes, cfg.holdout_fraction,
                         derive_seed(cfg.seed, "zone-prior-split"));
    Eigen::MatrixXd vtr(static_cast<Eigen::Index>(split.train.size()),
                        data.v.cols());
    Eigen::VectorXi ltr(static_cast<Eigen::Index>(split.train.size()));
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      vtr.row(static_cast<Eigen::Index>(i)) = data.v.row(split.train[i]);
      ltr[static_cast<Eigen::Index>(i)] = data.labels[split.train[i]];
    }
    model.linear = fit_softmax_head(vtr, ltr, n_classes,
                                    cfg.readout_iterations, cfg.readout_step,
                                    &res.readout_trace);
    res.train_accuracy =
        head_accuracy(data.v, model.linear, data.labels, split.train);
    res.holdout_accuracy =
        split.holdout.empty()
            ? res.train_accuracy
            : head_accuracy(data.v, model.linear, data.labels, split.holdout);
    res.low_accuracy = res.holdout_accuracy < cfg.min_holdout_accuracy;
  }

  model.holdout_accuracy = res.holdout_accuracy;
  model.low_accuracy = res.low_accuracy;
  if (result) *result = std::move(res);
  return model;
}

Eigen::VectorXd zone_prior(const ZonePriorModel& model,
                           const std::vector<SensorRecord>& sensors,
                           double eps) {
  const Eigen::VectorXd v = activation_pattern(sensors, model.features);
  if (model.backend == PriorBackend::logistic) {
    require(model.linear.rows() == v.size(),
            "zone prior: feature size mismatch");
    return floor_probabilities(softmax(model.linear.transpose() * v), eps);
  }
  return zone_prior(model.params, v, eps);
}

void save_zone_prior(const ZonePriorModel& model, const std::string& path) {
  jsonio::json j;
  j["schema_version"] = kZonePriorSchemaVersion;
  j["kind"] = "zone_prior";
  j["backend"] = model.backend == PriorBackend::deep ? "deep" : "logistic";
  j["zone_ids"] = model.zone_ids;
  j["times"] = jsonio::from_vector(model.features.times);
  j["thresholds"] = jsonio::from_vector(model.features.thresholds);
  j["W1"] = jsonio::from_matrix(model.params.W1);
  j["W2"] = jsonio::from_matrix(model.params.W2);
  j["readout"] = jsonio::from_matrix(model.params.readout);
  j["linear"] = jsonio::from_matrix(model.linear);
  j["holdout_accuracy"] = model.holdout_accuracy;
  j["low_accuracy"] = model.low_accuracy;
  jsonio::save_file(j, path);
}

ZonePriorModel load_zone_prior(const std::string& path) {
  const jsonio::json j = jsonio::load_file(path);
  require(j.value("kind", std::string()) == "zone_prior",
          "zone prior: not a zone prior checkpoint: " + path);
  require(j.value("schema_version", -1) == kZonePriorSchemaVersion,
          "zone prior: unsupported schema version in " + path);
  ZonePriorModel model;
  const std::string backend = j.at("backend").get<std::string>();
  require(backend == "deep" || backend == "logistic",
          "zone prior: unknown backend in " + path);
  model.backend =
      backend == "deep" ? PriorBackend::deep : PriorBackend::logistic;
  model.zone_ids = j.at("zone_ids").get<std::vector<std::string>>();
  model.features.times = jsonio::to_vector(j.at("times"));
  model.features.thresholds = jsonio::to_vector(j.at("thresholds"));
  model.params.W1 = jsonio::to_matrix(j.at("W1"));
  model.params.W2 = jsonio::to_matrix(j.at("W2"));
  model.params.readout = jsonio::to_matrix(j.at("readout"));
  model.linear = jsonio::to_matrix(j.at("linear"));
  model.holdout_accuracy = j.at("holdout_accuracy").get<double>();
  model.low_accuracy = j.at("low_accuracy").get<bool>();
  return model;
}

}  // namespace dmgp
