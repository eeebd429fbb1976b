#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ssm {

using cplx = std::complex<double>;
using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RVec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;

enum class ModelKind { S4, S4D, S5, LRU, S6, RGLRU };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
bool is_time_varying(ModelKind kind);

/// Time-major real signal. Row t holds the q channel values at step t.
class Sequence {
 public:
  Sequence() = default;
  /// Throws std::invalid_argument when empty or non-finite.
  explicit Sequence(RMat data);

  static Sequence zeros(int length, int channels);

  int length() const { return static_cast<int>(data_.rows()); }
  int channels() const { return static_cast<int>(data_.cols()); }
  const RMat& data() const { return data_; }
  double operator()(int t, int j) const { return data_(t, j); }

 private:
  RMat data_;
};

/// Rank-one update r s* of a diagonal-plus-low-rank dynamics matrix.
struct LowRank {
  CVec r;
  CVec s;
};

/// Continuous-time diagonal system dx/dt = (diag(lambda) + r s*) x + B u, y = C x + D u.
struct ContinuousSystem {
  CVec lambda;
  std::optional<LowRank> low_rank;
  CMat B;  // p x q
  CMat C;  // q x p
  RVec D;  // q, per-channel feedthrough
  double delta = 1.0;

  int state_size() const { return static_cast<int>(lambda.size()); }
  int channels() const { return static_cast<int>(D.size()); }
};

/// Discrete-time diagonal system x(k) = abar . x(k-1) + bbar u(k), y(k) = Re(cbar x(k)) + dbar . u(k).
struct DiscreteSystem {
  CVec abar;
  CMat bbar;  // p x q
  CMat cbar;  // q x p
  RVec dbar;  // q

  int state_size() const { return static_cast<int>(abar.size()); }
  int channels() const { return static_cast<int>(dbar.size()); }
};

/// Per-step real transition and drive streams of an input-dependent recurrence.
/// State index layout for multi-channel systems is channel-major: j * n + i.
struct TimeVaryingParams {
  RMat abar_seq;                // T x P
  RMat drive_seq;               // T x P, bbar_k u(k) already applied
  std::optional<RMat> c_seq;    // T x n readout rows (S6 only)
  RVec delta;                   // T, originating step sizes (empty when the model has none)
  int channels = 1;

  int length() const { return static_cast<int>(abar_seq.rows()); }
};

struct Violation {
  std::string invariant;
  int index = -1;
  std::string detail;
};

struct ValidateOptions {
  bool memory = true;        // enforce |abar_i| <= 1
  double disk_slack = 1e-12;
};

/// Diagnostic check of shapes, finiteness, and (optionally) the unit-disk condition.
std::vector<Violation> validate_system(const DiscreteSystem& sys, ValidateOptions opts = {});

/// Checks a continuous system; with `stable` set, every Re(lambda_i) must be <= 0.
std::vector<Violation> validate_system(const ContinuousSystem& sys, bool stable = false);

double spectral_radius(const DiscreteSystem& sys);

// Deterministic seed derivation: every random draw in the project comes from
// a named substream of one root seed.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0);

}  // namespace ssm
