#include "ssm/json_io.hpp"

namespace ssm {

using nlohmann::json;

namespace {

json complex_pair(cplx z) { return json::array({z.real(), z.imag()}); }

cplx complex_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("complex value must be [re, im]");
  return {j[0].get<double>(), j[1].get<double>()};
}

void expect_type(const json& j, const char* type) {
  if (j.contains("type") && j["type"] != type)
    throw std::invalid_argument(std::string("expected JSON object of type ") + type);
}

}  // namespace

json to_json(const RMat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const CMat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(complex_pair(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const RVec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json to_json(const CVec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(complex_pair(v(i)));
  return out;
}

RMat rmat_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  RMat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw std::invalid_argument("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

CMat cmat_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  CMat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw std::invalid_argument("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = complex_from(j[r][c]);
  }
  return m;
}

RVec rvec_from_json(const json& j) {
  RVec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

CVec cvec_from_json(const json& j) {
  CVec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = complex_from(j[i]);
  return v;
}

json to_json(const Sequence& s) {
  return {{"type", "Sequence"}, {"format_version", kFormatVersion}, {"length", s.length()}, {"data", to_json(s.data())}};
}

json to_json(const ContinuousSystem& s) {
  json j = {{"type", "ContinuousSystem"},
            {"format_version", kFormatVersion},
            {"lambda", to_json(s.lambda)},
            {"B", to_json(s.B)},
            {"C", to_json(s.C)},
            {"D", to_json(s.D)},
            {"delta", s.delta}};
  if (s.low_rank) j["low_rank"] = {{"r", to_json(s.low_rank->r)}, {"s", to_json(s.low_rank->s)}};
  return j;
}

json to_json(const DiscreteSystem& s) {
  return {{"type", "DiscreteSystem"},
          {"format_version", kFormatVersion},
          {"abar", to_json(s.abar)},
          {"bbar", to_json(s.bbar)},
          {"cbar", to_json(s.cbar)},
          {"dbar", to_json(s.dbar)}};
}

Sequence sequence_from_json(const json& j) {
  expect_type(j, "Sequence");
  Sequence s(rmat_from_json(j.at("data")));
  if (j.contains("length") && j["length"].get<int>() != s.length())
    throw std::invalid_argument("sequence length field disagrees with data");
  return s;
}

ContinuousSystem continuous_from_json(const json& j) {
  expect_type(j, "ContinuousSystem");
  ContinuousSystem s;
  s.lambda = cvec_from_json(j.at("lambda"));
  s.B = cmat_from_json(j.at("B"));
  s.C = cmat_from_json(j.at("C"));
  s.D = rvec_from_json(j.at("D"));
  s.delta = j.at("delta").get<double>();
  if (j.contains("low_rank") && !j["low_rank"].is_null())
    s.low_rank = LowRank{cvec_from_json(j["low_rank"].at("r")), cvec_from_json(j["low_rank"].at("s"))};
  return s;
}

DiscreteSystem discrete_from_json(const json& j) {
  expect_type(j, "DiscreteSystem");
  DiscreteSystem s;
  s.abar = cvec_from_json(j.at("abar"));
  s.bbar = cmat_from_json(j.at("bbar"));
  s.cbar = cmat_from_json(j.at("cbar"));
  s.dbar = rvec_from_json(j.at("dbar"));
  return s;
}

}  // namespace ssm
