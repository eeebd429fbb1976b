#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssm/learn/param_store.hpp"

namespace ssm::ad {

class NonFiniteGradientError : public std::runtime_error {
 public:
  NonFiniteGradientError(const std::string& what, std::string param)
      : std::runtime_error(what), param_(std::move(param)) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("Adam: lr must be positive");
  }

  /// Clips by global norm, then applies one bias-corrected update scaled per
  /// segment by lr_scale. Returns the pre-clip gradient norm. Throws
  /// NonFiniteGradientError before touching any parameter.
  double step(ParamStore& store);

  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  long steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

double global_norm(std::span<const double> g);

}  // namespace ssm::ad
