#pragma once

#include <string>

#include "ssm/learn/ops.hpp"
#include "ssm/learn/param_store.hpp"
#include "ssm/models.hpp"

namespace ssm {

/// Learning-rate multiplier applied to transition and step-size parameters.
inline constexpr double kDynamicsLrScale = 0.1;

/// Registers the trainable parameterization of a model core under `prefix`.
///   S4/S4D: log_dt, lambda_re_log, lambda_im (q x p/2), B, C (q x p/2), D; S4 adds r, s
///   S5:     log_dt, lambda_re_log, lambda_im (1 x p/2), B (p/2 x q), C (q x p/2), D
///   LRU:    nu_log, theta, gamma_log (1 x p), B (p x q), C (q x p), D
///   S6:     a_log (1 x n), w_delta, delta_bias, w_b, w_c, D
///   RG-LRU: w_a (1 x p), w_delta, w_b, c (frozen)
/// Only the free half of each conjugate pair is stored.
void add_core_params(ad::ParamStore& store, const std::string& prefix, const AnyModel& model,
                     double dynamics_lr_scale = kDynamicsLrScale);

/// Differentiable core forward on batched inputs (layout.rows() x q).
ad::Var core_forward(ad::Tape& tape, const ad::ParamStore& store, const std::string& prefix, ModelKind kind,
                     ad::Var u, ad::SeqLayout layout);

/// Plain model rebuilt from stored parameters (for cross-checks and export).
AnyModel extract_core(const ad::ParamStore& store, const std::string& prefix, ModelKind kind);

}  // namespace ssm
