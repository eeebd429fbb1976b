#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "ssm/learn/param_store.hpp"
#include "ssm/learn/tape.hpp"

namespace ssm::ad {

/// Builds a scalar loss on the tape from parameters taken out of the store.
using LossFn = std::function<Var(Tape&, const ParamStore&)>;

/// Zeroes the store's gradients, records the loss, runs backward and
/// accumulates parameter gradients. Returns the loss value.
double grad(const LossFn& loss, ParamStore& store);
/// Loss value with recording disabled.
double evaluate(const LossFn& loss, const ParamStore& store);

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates whose analytic and numeric gradients are both below this
  // magnitude are compared absolutely; central differences cannot resolve them.
  double abs_floor = 1e-6;
  int max_coords = 0;  // 0 checks every coordinate; otherwise a seeded sample
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares the gradient buffer with central differences. When `corrupt` is
/// set it perturbs the analytic gradient first (fault injection).
GradCheckResult finite_diff_check(const LossFn& loss, ParamStore& store, const GradCheckOptions& opts = {},
                                  const std::function<void(ParamStore&)>& corrupt = {});

}  // namespace ssm::ad
