#pragma once

#include <json.hpp>
#include <variant>
#include <vector>

#include "ssm/core.hpp"
#include "ssm/discretize.hpp"
#include "ssm/exec.hpp"

namespace ssm {

enum class ExecMode { recurrent, scan, conv };
enum class Discretization { zoh, bilinear };

std::string_view to_string(ExecMode mode);
ExecMode parse_exec_mode(std::string_view name);

/// Bank of single-input single-output subsystems, one per channel (S4, S4D).
struct SisoBank {
  std::vector<ContinuousSystem> channels;
};

/// Time-invariant model core. S4/S4D hold a SisoBank, S5 one MIMO
/// ContinuousSystem, LRU a DiscreteSystem parameterized directly.
struct LtiModel {
  ModelKind kind = ModelKind::S4D;
  std::variant<SisoBank, ContinuousSystem, DiscreteSystem> params;
  Discretization discretization = Discretization::zoh;  // S5 may use either

  int channels() const;
  /// Preferred execution: convolution for training S4/S4D, scan for S5/LRU.
  ExecMode preferred_mode() const;
};

/// Selective (input-dependent) diagonal model with shared n-dimensional B_k, C_k.
struct S6Model {
  RVec lambda;        // n, strictly negative
  RMat w_delta;       // 1 x q
  double delta_bias = 0.0;
  RMat w_b;           // n x q
  RMat w_c;           // n x q
  RVec d;             // q

  int state_size() const { return static_cast<int>(lambda.size()); }
  int channels() const { return static_cast<int>(d.size()); }
};

/// Real-gated linear recurrent unit; state feedback, y = x, p = q.
struct RgLruModel {
  RVec w_a;           // p
  RMat w_delta;       // p x p
  RMat w_b;           // p x p
  double c = 8.0;

  int channels() const { return static_cast<int>(w_a.size()); }
};

using AnyModel = std::variant<LtiModel, S6Model, RgLruModel>;

ModelKind kind_of(const AnyModel& m);

/// Discrete single-channel systems of a SISO bank (S4D only; S4 is DPLR).
std::vector<DiscreteSystem> discretize_bank(const LtiModel& model);
/// Discrete MIMO system: S5 and LRU directly, S4D as the block-diagonal stack of its channels.
DiscreteSystem to_mimo(const LtiModel& model);

Sequence lti_forward(const LtiModel& model, const Sequence& u, ExecMode mode, int workers = 1);

double softplus(double x);
double sigmoid(double x);

TimeVaryingParams s6_compute_params(const S6Model& model, const Sequence& u);
Sequence s6_forward(const S6Model& model, const Sequence& u, int workers = 1);

TimeVaryingParams rglru_compute_params(const RgLruModel& model, const Sequence& u);
Sequence rglru_forward(const RgLruModel& model, const Sequence& u, int workers = 1);

Sequence forward(const AnyModel& model, const Sequence& u, int workers = 1);

nlohmann::json to_json(const AnyModel& model);
AnyModel model_from_json(const nlohmann::json& j);

}  // namespace ssm
