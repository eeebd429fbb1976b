#pragma once

#include <json.hpp>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssm/core.hpp"

namespace ssm::ad {

/// Named parameter segments over one flat real buffer. Complex segments are
/// stored as interleaved (re, im) pairs. A parallel buffer holds gradients.
class ParamStore {
 public:
  struct Segment {
    std::string name;
    int rows = 0;
    int cols = 0;
    bool complex = false;
    std::size_t offset = 0;
    double lr_scale = 1.0;  // multiplies the optimizer learning rate

    std::size_t size() const { return static_cast<std::size_t>(rows) * cols * (complex ? 2 : 1); }
  };

  void add(const std::string& name, const RMat& value, double lr_scale = 1.0);
  void add(const std::string& name, const CMat& value, double lr_scale = 1.0);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Segment& segment(const std::string& name) const;
  const std::vector<Segment>& segments() const { return segments_; }

  RMat real(const std::string& name) const;
  CMat cplx(const std::string& name) const;
  void set(const std::string& name, const RMat& value);
  void set(const std::string& name, const CMat& value);

  void add_grad(const std::string& name, const RMat& g);
  void add_grad(const std::string& name, const CMat& g);
  RMat grad_real(const std::string& name) const;
  CMat grad_cplx(const std::string& name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }
  void zero_grad();

  std::size_t size() const { return values_.size(); }
  long step = 0;

  nlohmann::json to_json() const;
  static ParamStore from_json(const nlohmann::json& j);

 private:
  const Segment& checked(const std::string& name, bool complex, Eigen::Index rows, Eigen::Index cols) const;
  void add_segment(Segment seg);

  std::vector<Segment> segments_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

}  // namespace ssm::ad
