#pragma once

// Shared JSON <-> Eigen plumbing for the serialization units.  Not part
// of the installed interface.

#include <Eigen/Dense>
#include <fstream>
#include <json.hpp>
#include <string>

#include "dmgp/errors.hpp"

namespace dmgp::jsonio {

using nlohmann::json;

inline json from_matrix(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json from_vector(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Eigen::MatrixXd to_matrix(const json& j) {
  require(j.is_array(), "json: expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return {};
  require(j[0].is_array(), "json: expected nested row arrays");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    require(static_cast<Eigen::Index>(j[i].size()) == cols,
            "json: ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline Eigen::VectorXd to_vector(const json& j) {
  require(j.is_array(), "json: expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline json load_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open file: " + path);
  json j;
  in >> j;
  return j;
}

inline void save_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write file: " + path);
  out << j.dump(1) << '\n';
}

}  // namespace dmgp::jsonio
