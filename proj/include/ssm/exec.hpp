#pragma once

#include <atomic>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssm/core.hpp"
#include "ssm/discretize.hpp"

namespace ssm {

/// Non-finite state encountered while running a recurrence.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct StepResult {
  CVec x;
  RVec y;
};

/// One step with state-before-readout timing: x' = abar . x + bbar u, y = Re(cbar x') + dbar . u.
StepResult step(const DiscreteSystem& sys, const CVec& x, const RVec& u);

/// y(k) = sum_{tau<=k} Re(cbar abar^{k-tau} bbar) u(tau) + dbar . u(k).
Sequence run_recurrent(const DiscreteSystem& sys, const Sequence& u, const std::optional<CVec>& x0 = std::nullopt);
Sequence run_recurrent(const DplrDiscrete& sys, const Sequence& u);

// ---------------------------------------------------------------------------
// Associative scan over affine maps x -> a . x + b.

template <class S>
struct ScanElement {
  Eigen::Matrix<S, Eigen::Dynamic, 1> a;
  Eigen::Matrix<S, Eigen::Dynamic, 1> b;

  static ScanElement identity(int p) {
    return {Eigen::Matrix<S, Eigen::Dynamic, 1>::Ones(p), Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(p)};
  }
};

/// Time-ordered composition: e1 happens first, then e2.
template <class S>
ScanElement<S> combine(const ScanElement<S>& e1, const ScanElement<S>& e2) {
  if (e1.a.size() != e2.a.size() || e1.b.size() != e2.b.size() || e1.a.size() != e1.b.size())
    throw std::invalid_argument("combine: shape mismatch");
  return {e2.a.cwiseProduct(e1.a), e2.a.cwiseProduct(e1.b) + e2.b};
}

struct ScanStats {
  std::atomic<long> combines{0};
  int chunks = 0;
  int tree_leaves = 0;
};

struct ScanOptions {
  int workers = 1;
  ScanStats* stats = nullptr;
  int min_chunk = 64;  // smallest time chunk handed to one worker
};

template <class S>
using SMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// States x(k) = abar(k) . x(k-1) + drive(k), x(-1) = 0, for all k.
/// abar_seq is T x p, or 1 x p for a time-invariant transition.
/// Work-efficient three-phase scan: chunk-local scans, a Blelloch tree over
/// chunk totals (padded with identities to a power of two), and carry
/// propagation. Results are independent of the worker count up to
/// floating-point reassociation.
template <class S>
SMat<S> scan(const SMat<S>& abar_seq, const SMat<S>& drive_seq, const ScanOptions& opts = {});

/// Plain sequential loop, kept as the reference for scan().
template <class S>
SMat<S> scan_sequential(const SMat<S>& abar_seq, const SMat<S>& drive_seq);

/// LTI output computed through scan(): drive = u bbar^T, y = Re(x cbar^T) + dbar . u.
Sequence run_scan(const DiscreteSystem& sys, const Sequence& u, const ScanOptions& opts = {});

// ---------------------------------------------------------------------------
// Convolution view.

/// Impulse-response taps K_j = Re(cbar abar^j bbar), each q x q.
struct Kernel {
  std::vector<RMat> taps;
  int length() const { return static_cast<int>(taps.size()); }
  int channels() const { return taps.empty() ? 0 : static_cast<int>(taps.front().rows()); }
};

Kernel materialize_kernel(const DiscreteSystem& sys, int length);
Kernel materialize_kernel(const DplrDiscrete& sys, int length);

/// Causal FFT convolution of u with the kernel plus the diagonal feedthrough.
Sequence run_convolution(const Kernel& kernel, const RVec& dbar, const Sequence& u, int workers = 1);
Sequence run_convolution(const DiscreteSystem& sys, const Sequence& u, int workers = 1);

}  // namespace ssm
