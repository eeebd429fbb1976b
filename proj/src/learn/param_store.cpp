#include "ssm/learn/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssm/json_io.hpp"

namespace ssm::ad {

using nlohmann::json;

void ParamStore::add_segment(Segment seg) {
  if (contains(seg.name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + seg.name + "'");
  seg.offset = values_.size();
  values_.resize(values_.size() + seg.size(), 0.0);
  grads_.resize(values_.size(), 0.0);
  index_[seg.name] = segments_.size();
  segments_.push_back(std::move(seg));
}

void ParamStore::add(const std::string& name, const RMat& value, double lr_scale) {
  add_segment({name, static_cast<int>(value.rows()), static_cast<int>(value.cols()), false, 0, lr_scale});
  set(name, value);
}

void ParamStore::add(const std::string& name, const CMat& value, double lr_scale) {
  add_segment({name, static_cast<int>(value.rows()), static_cast<int>(value.cols()), true, 0, lr_scale});
  set(name, value);
}

const ParamStore::Segment& ParamStore::segment(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  return segments_[it->second];
}

const ParamStore::Segment& ParamStore::checked(const std::string& name, bool complex, Eigen::Index rows,
                                               Eigen::Index cols) const {
  const Segment& s = segment(name);
  if (s.complex != complex) throw std::invalid_argument("ParamStore: '" + name + "' real/complex mismatch");
  if (rows >= 0 && (s.rows != rows || s.cols != cols))
    throw std::invalid_argument("ParamStore: '" + name + "' shape mismatch");
  return s;
}

RMat ParamStore::real(const std::string& name) const {
  const Segment& s = checked(name, false, -1, -1);
  return Eigen::Map<const RMat>(values_.data() + s.offset, s.rows, s.cols);
}

CMat ParamStore::cplx(const std::string& name) const {
  const Segment& s = checked(name, true, -1, -1);
  return Eigen::Map<const CMat>(reinterpret_cast<const ssm::cplx*>(values_.data() + s.offset), s.rows, s.cols);
}

void ParamStore::set(const std::string& name, const RMat& value) {
  const Segment& s = checked(name, false, value.rows(), value.cols());
  Eigen::Map<RMat>(values_.data() + s.offset, s.rows, s.cols) = value;
}

void ParamStore::set(const std::string& name, const CMat& value) {
  const Segment& s = checked(name, true, value.rows(), value.cols());
  Eigen::Map<CMat>(reinterpret_cast<ssm::cplx*>(values_.data() + s.offset), s.rows, s.cols) = value;
}

void ParamStore::add_grad(const std::string& name, const RMat& g) {
  const Segment& s = checked(name, false, g.rows(), g.cols());
  Eigen::Map<RMat>(grads_.data() + s.offset, s.rows, s.cols) += g;
}

void ParamStore::add_grad(const std::string& name, const CMat& g) {
  const Segment& s = checked(name, true, g.rows(), g.cols());
  Eigen::Map<CMat>(reinterpret_cast<ssm::cplx*>(grads_.data() + s.offset), s.rows, s.cols) += g;
}

RMat ParamStore::grad_real(const std::string& name) const {
  const Segment& s = checked(name, false, -1, -1);
  return Eigen::Map<const RMat>(grads_.data() + s.offset, s.rows, s.cols);
}

CMat ParamStore::grad_cplx(const std::string& name) const {
  const Segment& s = checked(name, true, -1, -1);
  return Eigen::Map<const CMat>(reinterpret_cast<const ssm::cplx*>(grads_.data() + s.offset), s.rows, s.cols);
}

void ParamStore::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

json ParamStore::to_json() const {
  json segs = json::array();
  for (const Segment& s : segments_) {
    json e = {{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"complex", s.complex}, {"lr_scale", s.lr_scale}};
    e["data"] = std::vector<double>(values_.begin() + s.offset, values_.begin() + s.offset + s.size());
    segs.push_back(std::move(e));
  }
  return {{"format_version", kFormatVersion}, {"step", step}, {"params", segs}};
}

ParamStore ParamStore::from_json(const json& j) {
  if (j.at("format_version").get<int>() != kFormatVersion) throw std::invalid_argument("ParamStore: unsupported format");
  ParamStore store;
  for (const json& e : j.at("params")) {
    Segment s{e.at("name").get<std::string>(), e.at("rows").get<int>(), e.at("cols").get<int>(),
              e.at("complex").get<bool>(), 0, e.value("lr_scale", 1.0)};
    const auto data = e.at("data").get<std::vector<double>>();
    if (data.size() != s.size()) throw std::invalid_argument("ParamStore: segment '" + s.name + "' has wrong length");
    for (double v : data)
      if (!std::isfinite(v)) throw std::invalid_argument("ParamStore: non-finite value in '" + s.name + "'");
    const std::size_t off = store.values_.size();
    store.add_segment(s);
    std::copy(data.begin(), data.end(), store.values_.begin() + off);
  }
  store.step = j.value("step", 0L);
  return store;
}

}  // namespace ssm::ad
