#pragma once

#include <stdexcept>
#include <vector>

#include "ssm/core.hpp"

namespace ssm {

/// Raised when a discretization pivot or Sherman-Morrison denominator vanishes.
class DiscretizationError : public std::runtime_error {
 public:
  DiscretizationError(const std::string& what, int index) : std::runtime_error(what), index_(index) {}
  int index() const { return index_; }

 private:
  int index_;
};

inline constexpr double kSingularPivotTol = 1e-12;
inline constexpr double kSmallArgument = 1e-4;

/// (e^z - 1) / z, with a Taylor series for |z| < 1e-4.
cplx expm1_over(cplx z);
double expm1_over(double z);

/// Bilinear (Tustin) transform of a diagonal system. Rejects systems carrying a low-rank term.
DiscreteSystem bilinear(const ContinuousSystem& sys);

/// Exact (zero-order hold) discretization of a diagonal system.
DiscreteSystem zoh(const ContinuousSystem& sys);

/// Bilinear discretization of a diagonal-plus-low-rank system. The dense
/// transition (I - h A)^{-1} (I + h A), h = delta / 2, is never formed;
/// its inverse is applied through the Sherman-Morrison identity.
class DplrDiscrete {
 public:
  explicit DplrDiscrete(const ContinuousSystem& sys);

  int state_size() const { return static_cast<int>(lambda_.size()); }
  int channels() const { return static_cast<int>(dbar_.size()); }

  /// abar * v.
  CVec apply_transition(const CVec& v) const;
  /// (I - h A)^{-1} w.
  CVec apply_inverse(const CVec& w) const;

  const CMat& bbar() const { return bbar_; }
  const CMat& cbar() const { return cbar_; }
  const RVec& dbar() const { return dbar_; }

  /// Materializes abar column by column (small p only; used for eigenvalue checks).
  CMat dense_transition() const;

 private:
  CVec lambda_, r_, s_;
  double half_step_;
  CVec inv_diag_;   // 1 / (1 - h lambda_i)
  CVec inv_diag_r_; // D^{-1} r
  cplx sm_denominator_;
  CMat bbar_, cbar_;
  RVec dbar_;
};

DplrDiscrete bilinear_dplr(const ContinuousSystem& sys);

/// Per-step exact discretization under a time-varying step size.
struct TimeVaryingZoh {
  CMat abar;                 // T x p
  std::vector<CMat> bbar;    // T entries, each p x q
};

TimeVaryingZoh zoh_timevarying(const CVec& lambda, const RVec& delta_seq, const std::vector<CMat>& b_seq);

}  // namespace ssm
