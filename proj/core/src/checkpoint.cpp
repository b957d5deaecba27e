#include "dmgp/checkpoint.hpp"

#include "dmgp/errors.hpp"
#include "json_io.hpp"

namespace dmgp {

using jsonio::json;

void save_model(const DmgpModel& model, const std::string& path) {
  json j;
  j["schema_version"] = kModelSchemaVersion;
  j["kind"] = "dmgp_model";
  j["seed"] = model.seed;
  j["k_train"] = model.k_train;
  j["k_pred"] = model.k_pred;
  j["sigma_y2"] = model.sigma_y2;
  json layers = json::array();
  for (const LayerParams& layer : model.layers) {
    json l;
    l["Z"] = jsonio::from_matrix(layer.Z);
    l["A"] = jsonio::from_matrix(layer.A);
    l["Ls"] = jsonio::from_matrix(layer.Ls);
    l["Lsig"] = jsonio::from_matrix(layer.Lsig);
    l["log_ell"] = jsonio::from_vector(layer.kernel.log_ell);
    l["log_sf"] = layer.kernel.log_sf;
    l["H"] = jsonio::from_matrix(layer.H);
    l["b"] = jsonio::from_vector(layer.b.transpose());
    l["W"] = jsonio::from_vector(layer.W);
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  jsonio::save_file(j, path);
}

DmgpModel load_model(const std::string& path) {
  const json j = jsonio::load_file(path);
  require(j.value("kind", "") == "dmgp_model",
          "checkpoint: not a model file: " + path);
  require(j.value("schema_version", -1) == kModelSchemaVersion,
          "checkpoint: unsupported schema version in " + path);

  DmgpModel model;
  model.seed = j.at("seed").get<std::uint64_t>();
  model.k_train = j.at("k_train").get<int>();
  model.k_pred = j.at("k_pred").get<int>();
  model.sigma_y2 = j.at("sigma_y2").get<double>();
  require(model.k_train >= 1 && model.k_pred >= 2,
          "checkpoint: invalid sample counts");

  for (const json& l : j.at("layers")) {
    LayerParams layer;
    layer.Z = jsonio::to_matrix(l.at("Z"));
    layer.A = jsonio::to_matrix(l.at("A"));
    layer.Ls = jsonio::to_matrix(l.at("Ls"));
    layer.Lsig = jsonio::to_matrix(l.at("Lsig"));
    layer.kernel = SeArdKernel(layer.Z.cols());
    layer.kernel.log_ell = jsonio::to_vector(l.at("log_ell"));
    layer.kernel.log_sf = l.at("log_sf").get<double>();
    layer.H = jsonio::to_matrix(l.at("H"));
    layer.b = jsonio::to_vector(l.at("b")).transpose();
    layer.W = jsonio::to_vector(l.at("W"));
    require(layer.A.rows() == layer.Z.rows(),
            "checkpoint: Z/A row mismatch");
    model.layers.push_back(std::move(layer));
  }
  require(!model.layers.empty(), "checkpoint: no layers");
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l)
    require(model.layers[l].dout() == model.layers[l + 1].din(),
            "checkpoint: layer dims do not chain");
  require(model.layers.back().is_final(),
          "checkpoint: final layer must not carry observation noise");
  model.refresh_cache();
  return model;
}

}  // namespace dmgp
