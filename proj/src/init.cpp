#include "ssm/init.hpp"

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

namespace ssm {

namespace {

using Rng = std::mt19937_64;

CMat complex_normal(Rng& rng, int rows, int cols, double variance) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5 * variance));
  CMat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double re = n(rng);
      const double im = n(rng);
      m(i, j) = {re, im};
    }
  return m;
}

RMat glorot_uniform(Rng& rng, int rows, int cols) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  RMat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

RVec standard_normal(Rng& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  RVec v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

// Rows [0, p/2) are free; rows [p/2, p) are their conjugates.
CMat mirror_rows(const CMat& half) {
  CMat full(2 * half.rows(), half.cols());
  full.topRows(half.rows()) = half;
  full.bottomRows(half.rows()) = half.conjugate();
  return full;
}

CMat mirror_cols(const CMat& half) {
  CMat full(half.rows(), 2 * half.cols());
  full.leftCols(half.cols()) = half;
  full.rightCols(half.cols()) = half.conjugate();
  return full;
}

void require_even(int p, const char* who) {
  if (p < 2 || p % 2 != 0)
    throw std::invalid_argument(std::string(who) + ": p must be even (conjugate-pair storage), got " + std::to_string(p));
}

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

ContinuousSystem diagonal_system(const InitSpec& spec, const CVec& lambda, bool glorot) {
  const int p = static_cast<int>(lambda.size());
  const int m = p / 2;
  Rng rng_b(derive_seed(spec.seed, "B"));
  Rng rng_c(derive_seed(spec.seed, "C"));
  Rng rng_d(derive_seed(spec.seed, "D"));
  ContinuousSystem sys;
  sys.lambda = lambda;
  const double b_var = glorot ? 2.0 / (p + spec.q) : 1.0 / spec.q;
  const double c_var = glorot ? 2.0 / (p + spec.q) : 1.0 / p;
  sys.B = mirror_rows(complex_normal(rng_b, m, spec.q, b_var));
  sys.C = mirror_cols(complex_normal(rng_c, spec.q, m, c_var));
  sys.D = standard_normal(rng_d, spec.q);
  sys.delta = sample_log_uniform(derive_seed(spec.seed, "delta"), spec.delta_range);
  return sys;
}

}  // namespace

void validate(const InitSpec& spec) {
  if (spec.p < 1 || spec.q < 1) throw std::invalid_argument("InitSpec: p and q must be positive");
  const auto& ring = spec.lru_ring;
  if (!(ring.r_min > 0.0 && ring.r_min < ring.r_max && ring.r_max <= 1.0))
    throw std::invalid_argument("InitSpec: LRU ring needs 0 < r_min < r_max <= 1");
  if (!(ring.max_phase >= 0.0)) throw std::invalid_argument("InitSpec: max_phase must be non-negative");
  if (!(spec.delta_range.first > 0.0 && spec.delta_range.first <= spec.delta_range.second))
    throw std::invalid_argument("InitSpec: delta range needs 0 < delta_min <= delta_max");
  if (!(spec.rglru_band.first > 0.0 && spec.rglru_band.first <= spec.rglru_band.second && spec.rglru_band.second < 1.0))
    throw std::invalid_argument("InitSpec: RG-LRU band needs 0 < lo <= hi < 1");
  if (!(spec.rglru_c > 0.0)) throw std::invalid_argument("InitSpec: c must be positive");
}

double sample_log_uniform(std::uint64_t seed, std::pair<double, double> range) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(std::log(range.first), std::log(range.second));
  return range.first == range.second ? range.first : std::exp(u(rng));
}

CVec s4d_lin_spectrum(int p) {
  require_even(p, "s4d_lin_spectrum");
  const int m = p / 2;
  CVec lambda(p);
  for (int n = 0; n < m; ++n) {
    lambda(n) = {-0.5, std::numbers::pi * n};
    lambda(m + n) = std::conj(lambda(n));
  }
  return lambda;
}

ContinuousSystem init_s4(const InitSpec& spec) {
  validate(spec);
  require_even(spec.p, "init_s4");
  ContinuousSystem sys = diagonal_system(spec, s4d_lin_spectrum(spec.p), false);
  const int m = spec.p / 2;
  CVec r(spec.p);
  for (int n = 0; n < m; ++n) r(n) = r(m + n) = std::sqrt(n + 0.5);
  sys.low_rank = LowRank{r, -r};
  return sys;
}

ContinuousSystem init_s4d(const InitSpec& spec) {
  validate(spec);
  require_even(spec.p, "init_s4d");
  return diagonal_system(spec, s4d_lin_spectrum(spec.p), false);
}

ContinuousSystem init_s5(const InitSpec& spec, int n_blocks) {
  validate(spec);
  if (n_blocks < 1 || spec.p % n_blocks != 0)
    throw std::invalid_argument("init_s5: p = " + std::to_string(spec.p) + " not divisible by " + std::to_string(n_blocks) +
                                " blocks");
  const int block = spec.p / n_blocks;
  require_even(block, "init_s5 block");
  const CVec blk = s4d_lin_spectrum(block);
  const int bm = block / 2;
  const int m = spec.p / 2;
  CVec lambda(spec.p);
  for (int b = 0; b < n_blocks; ++b) lambda.segment(b * bm, bm) = blk.head(bm);
  lambda.tail(m) = lambda.head(m).conjugate();
  return diagonal_system(spec, lambda, true);
}

DiscreteSystem init_lru(const InitSpec& spec) {
  validate(spec);
  const auto& ring = spec.lru_ring;
  Rng rng(derive_seed(spec.seed, "ring"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int p = spec.p;
  DiscreteSystem sys;
  sys.abar.resize(p);
  RVec gamma(p);
  for (int j = 0; j < p; ++j) {
    const double u = unit(rng);
    const double r = std::sqrt(ring.r_min * ring.r_min + u * (ring.r_max * ring.r_max - ring.r_min * ring.r_min));
    const double theta = ring.max_phase * unit(rng);
    const double nu = std::log(-std::log(r));
    sys.abar(j) = std::exp(cplx(-std::exp(nu), theta));
    gamma(j) = 0.5 * std::log(1.0 - r * r);
  }
  Rng rng_b(derive_seed(spec.seed, "B"));
  Rng rng_c(derive_seed(spec.seed, "C"));
  Rng rng_d(derive_seed(spec.seed, "D"));
  const CMat big_gamma = complex_normal(rng_b, p, spec.q, 1.0 / spec.q);
  sys.bbar = gamma.array().exp().matrix().cast<cplx>().asDiagonal() * big_gamma;
  sys.cbar = complex_normal(rng_c, spec.q, p, 1.0 / p);
  sys.dbar = standard_normal(rng_d, spec.q);
  return sys;
}

S6Model init_s6(const InitSpec& spec) {
  validate(spec);
  const int n = spec.p;
  const int q = spec.q;
  S6Model m;
  m.lambda.resize(n);
  for (int i = 0; i < n; ++i) m.lambda(i) = -(i + 1.0);
  Rng rng(derive_seed(spec.seed, "projections"));
  m.w_delta = glorot_uniform(rng, 1, q);
  m.w_b = glorot_uniform(rng, n, q);
  m.w_c = glorot_uniform(rng, n, q);
  m.delta_bias = inverse_softplus(sample_log_uniform(derive_seed(spec.seed, "delta"), spec.delta_range));
  m.d = RVec::Ones(q);
  return m;
}

RgLruModel init_rglru(const InitSpec& spec) {
  validate(spec);
  if (spec.p != spec.q)
    throw std::invalid_argument("init_rglru: state size must equal input size (p = " + std::to_string(spec.p) +
                                ", q = " + std::to_string(spec.q) + ")");
  const int p = spec.p;
  RgLruModel m;
  m.c = spec.rglru_c;
  m.w_a.resize(p);
  Rng rng_a(derive_seed(spec.seed, "rest_band"));
  std::uniform_real_distribution<double> band(spec.rglru_band.first, spec.rglru_band.second);
  for (int i = 0; i < p; ++i) {
    // at rest sigmoid(0) = 1/2, so abar = exp(-c softplus(w_a) / 2)
    const double a = band(rng_a);
    m.w_a(i) = inverse_softplus(-2.0 * std::log(a) / m.c);
  }
  Rng rng(derive_seed(spec.seed, "projections"));
  m.w_delta = glorot_uniform(rng, p, p);
  m.w_b = glorot_uniform(rng, p, p);
  return m;
}

AnyModel init_model(const InitSpec& spec, int s5_blocks) {
  validate(spec);
  switch (spec.model_kind) {
    case ModelKind::S4:
    case ModelKind::S4D: {
      SisoBank bank;
      for (int j = 0; j < spec.q; ++j) {
        InitSpec sub = spec;
        sub.q = 1;
        sub.seed = derive_seed(spec.seed, "channel", j);
        // each channel draws its own step size, so the bank spans several timescales
        bank.channels.push_back(spec.model_kind == ModelKind::S4 ? init_s4(sub) : init_s4d(sub));
      }
      return LtiModel{spec.model_kind, std::move(bank), Discretization::zoh};
    }
    case ModelKind::S5: return LtiModel{ModelKind::S5, init_s5(spec, s5_blocks), Discretization::zoh};
    case ModelKind::LRU: return LtiModel{ModelKind::LRU, init_lru(spec), Discretization::zoh};
    case ModelKind::S6: return init_s6(spec);
    case ModelKind::RGLRU: return init_rglru(spec);
  }
  throw std::logic_error("unreachable");
}

std::vector<EigenPoint> eig_scatter(const AnyModel& model, const std::vector<Sequence>& sample_inputs) {
  std::vector<EigenPoint> out;
  const std::string name(to_string(kind_of(model)));
  if (const auto* lti = std::get_if<LtiModel>(&model)) {
    if (lti->kind == ModelKind::S4) {
      for (const auto& ch : std::get<SisoBank>(lti->params).channels) {
        const DplrDiscrete d(ch);
        Eigen::ComplexEigenSolver<Eigen::MatrixXcd> solver(Eigen::MatrixXcd(d.dense_transition()), false);
        for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i)
          out.push_back({name, -1, -1, solver.eigenvalues()(i)});
      }
    } else {
      const DiscreteSystem sys = to_mimo(*lti);
      for (int i = 0; i < sys.state_size(); ++i) out.push_back({name, -1, -1, sys.abar(i)});
    }
    return out;
  }
  if (sample_inputs.empty()) throw std::invalid_argument("eig_scatter: time-varying models need sample inputs");
  for (std::size_t id = 0; id < sample_inputs.size(); ++id) {
    TimeVaryingParams tv;
    int per_step;
    if (const auto* s6 = std::get_if<S6Model>(&model)) {
      tv = s6_compute_params(*s6, sample_inputs[id]);
      per_step = s6->state_size();  // shared across channels; channel 0 block
    } else {
      const auto& rg = std::get<RgLruModel>(model);
      tv = rglru_compute_params(rg, sample_inputs[id]);
      per_step = rg.channels();
    }
    for (int k = 0; k < tv.length(); ++k)
      for (int i = 0; i < per_step; ++i) out.push_back({name, static_cast<int>(id), k, cplx(tv.abar_seq(k, i), 0.0)});
  }
  return out;
}

}  // namespace ssm
