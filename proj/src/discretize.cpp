#include "ssm/discretize.hpp"

#include <cmath>
#include <string>

namespace ssm {

namespace {

// expm1 without cancellation for complex arguments.
cplx complex_expm1(cplx z) {
  const double x = z.real();
  const double y = z.imag();
  const double s = std::sin(0.5 * y);
  const double re = std::expm1(x) * std::cos(y) - 2.0 * s * s;
  const double im = std::exp(x) * std::sin(y);
  return {re, im};
}

void check_shapes(const ContinuousSystem& sys) {
  const auto v = validate_system(sys, false);
  if (!v.empty()) throw std::invalid_argument("invalid continuous system: " + v.front().invariant);
}

cplx bilinear_pivot(cplx lambda, double half_step, int index) {
  const cplx hl = half_step * lambda;
  const cplx pivot = 1.0 - hl;
  if (std::abs(pivot) < kSingularPivotTol * std::max(1.0, std::abs(hl)))
    throw DiscretizationError("singular bilinear pivot at state " + std::to_string(index), index);
  return pivot;
}

}  // namespace

cplx expm1_over(cplx z) {
  if (std::abs(z) < kSmallArgument) return 1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0)));
  return complex_expm1(z) / z;
}

double expm1_over(double z) {
  if (std::abs(z) < kSmallArgument) return 1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0)));
  return std::expm1(z) / z;
}

DiscreteSystem bilinear(const ContinuousSystem& sys) {
  check_shapes(sys);
  if (sys.low_rank) throw std::invalid_argument("bilinear: system has a low-rank term; use bilinear_dplr");
  const int p = sys.state_size();
  const double h = 0.5 * sys.delta;
  DiscreteSystem out;
  out.abar.resize(p);
  out.bbar.resize(p, sys.channels());
  for (int i = 0; i < p; ++i) {
    const cplx pivot = bilinear_pivot(sys.lambda(i), h, i);
    out.abar(i) = (1.0 + h * sys.lambda(i)) / pivot;
    out.bbar.row(i) = sys.B.row(i) * (sys.delta / pivot);
  }
  out.cbar = sys.C;
  out.dbar = sys.D;
  return out;
}

DiscreteSystem zoh(const ContinuousSystem& sys) {
  check_shapes(sys);
  if (sys.low_rank) throw std::invalid_argument("zoh: low-rank term not supported");
  const int p = sys.state_size();
  DiscreteSystem out;
  out.abar.resize(p);
  out.bbar.resize(p, sys.channels());
  for (int i = 0; i < p; ++i) {
    const cplx z = sys.delta * sys.lambda(i);
    out.abar(i) = std::exp(z);
    // lambda^{-1} (e^{delta lambda} - 1) = delta * (e^z - 1) / z
    out.bbar.row(i) = sys.B.row(i) * (sys.delta * expm1_over(z));
  }
  out.cbar = sys.C;
  out.dbar = sys.D;
  return out;
}

DplrDiscrete::DplrDiscrete(const ContinuousSystem& sys) {
  check_shapes(sys);
  const int p = sys.state_size();
  lambda_ = sys.lambda;
  if (sys.low_rank) {
    r_ = sys.low_rank->r;
    s_ = sys.low_rank->s;
  } else {
    r_ = CVec::Zero(p);
    s_ = CVec::Zero(p);
  }
  half_step_ = 0.5 * sys.delta;
  inv_diag_.resize(p);
  for (int i = 0; i < p; ++i) inv_diag_(i) = 1.0 / bilinear_pivot(lambda_(i), half_step_, i);
  inv_diag_r_ = inv_diag_.cwiseProduct(r_);
  // M = D - h r s*,  M^{-1} = D^{-1} + h D^{-1} r s* D^{-1} / (1 - h s* D^{-1} r)
  sm_denominator_ = 1.0 - half_step_ * s_.dot(inv_diag_r_);
  if (std::abs(sm_denominator_) < kSingularPivotTol)
    throw DiscretizationError("degenerate Sherman-Morrison denominator", -1);
  bbar_.resize(p, sys.channels());
  for (int j = 0; j < sys.channels(); ++j) bbar_.col(j) = apply_inverse(sys.delta * sys.B.col(j));
  cbar_ = sys.C;
  dbar_ = sys.D;
}

CVec DplrDiscrete::apply_inverse(const CVec& w) const {
  const CVec dw = inv_diag_.cwiseProduct(w);
  const cplx coeff = half_step_ * s_.dot(dw) / sm_denominator_;  // dot() conjugates s
  return dw + coeff * inv_diag_r_;
}

CVec DplrDiscrete::apply_transition(const CVec& v) const {
  // (I + h A) v = v + h (lambda . v + r (s* v))
  const CVec nv = v + half_step_ * (lambda_.cwiseProduct(v) + r_ * s_.dot(v));
  return apply_inverse(nv);
}

CMat DplrDiscrete::dense_transition() const {
  const int p = state_size();
  CMat m(p, p);
  for (int j = 0; j < p; ++j) m.col(j) = apply_transition(CVec::Unit(p, j));
  return m;
}

DplrDiscrete bilinear_dplr(const ContinuousSystem& sys) {
  if (!sys.low_rank) throw std::invalid_argument("bilinear_dplr: system has no low-rank term");
  return DplrDiscrete(sys);
}

TimeVaryingZoh zoh_timevarying(const CVec& lambda, const RVec& delta_seq, const std::vector<CMat>& b_seq) {
  const int p = static_cast<int>(lambda.size());
  const int T = static_cast<int>(delta_seq.size());
  if (static_cast<int>(b_seq.size()) != T) throw std::invalid_argument("zoh_timevarying: b_seq length != delta_seq length");
  TimeVaryingZoh out;
  out.abar.resize(T, p);
  out.bbar.reserve(T);
  for (int k = 0; k < T; ++k) {
    const double dk = delta_seq(k);
    if (!(dk > 0.0)) throw std::invalid_argument("zoh_timevarying: delta must be positive at step " + std::to_string(k));
    if (b_seq[k].rows() != p) throw std::invalid_argument("zoh_timevarying: B_k must have p rows");
    CMat bk(p, b_seq[k].cols());
    for (int i = 0; i < p; ++i) {
      const cplx z = dk * lambda(i);
      out.abar(k, i) = std::exp(z);
      bk.row(i) = b_seq[k].row(i) * (dk * expm1_over(z));
    }
    out.bbar.push_back(std::move(bk));
  }
  return out;
}

}  // namespace ssm
