#pragma once

#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ssm/core.hpp"
#include "ssm/models.hpp"

namespace ssm {

struct LruRing {
  double r_min = 0.9;
  double r_max = 0.999;
  double max_phase = 2.0 * std::numbers::pi;
};

struct InitSpec {
  ModelKind model_kind = ModelKind::S4D;
  int p = 8;  // state size (per channel for S4/S4D, per layer otherwise)
  int q = 1;  // channels
  LruRing lru_ring;
  std::pair<double, double> delta_range{1e-3, 1e-1};
  std::uint64_t seed = 0;
  // RG-LRU: band of |abar| at rest (u = 0) and the gate constant.
  std::pair<double, double> rglru_band{0.9, 0.999};
  double rglru_c = 8.0;
};

/// Throws std::invalid_argument when an InitSpec field is out of range.
void validate(const InitSpec& spec);

/// lambda_n = -1/2 + i pi n, n < p/2, followed by the conjugates.
CVec s4d_lin_spectrum(int p);

/// Diagonal-plus-low-rank system A = diag(lambda) + r s* with r_n = sqrt(n + 1/2), s = -r.
ContinuousSystem init_s4(const InitSpec& spec);
ContinuousSystem init_s4d(const InitSpec& spec);
ContinuousSystem init_s5(const InitSpec& spec, int n_blocks);
DiscreteSystem init_lru(const InitSpec& spec);
S6Model init_s6(const InitSpec& spec);
RgLruModel init_rglru(const InitSpec& spec);

/// Full model core for the given spec; SISO kinds get one p-state subsystem per channel.
AnyModel init_model(const InitSpec& spec, int s5_blocks = 1);

/// Delta sampled log-uniformly from the range.
double sample_log_uniform(std::uint64_t seed, std::pair<double, double> range);

struct EigenPoint {
  std::string model;
  int input_id = -1;  // -1 for time-invariant models
  int step = -1;
  cplx z;
};

/// Eigenvalues of the discrete transition: diag(abar) for LTI kinds (dense
/// DPLR spectrum for S4), per-step diagonals under each input for S6/RG-LRU.
std::vector<EigenPoint> eig_scatter(const AnyModel& model, const std::vector<Sequence>& sample_inputs);

}  // namespace ssm
