#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "ssm/init.hpp"
#include "ssm/models.hpp"
#include "ssm/verify.hpp"

using namespace ssm;

namespace {

Sequence noise(std::uint64_t seed, int T, int q, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  return Sequence(RMat::NullaryExpr(T, q, [&] { return g(rng); }));
}

InitSpec spec_for(ModelKind k, int p, int q, std::uint64_t seed = 1) {
  InitSpec s;
  s.model_kind = k;
  s.p = p;
  s.q = q;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("S4 and S4D spectra") {
  const CVec lam = s4d_lin_spectrum(6);
  for (int n = 0; n < 3; ++n) {
    CHECK(lam(n) == cplx(-0.5, std::numbers::pi * n));
    CHECK(lam(n + 3) == std::conj(lam(n)));
  }
  const ContinuousSystem s4 = init_s4(spec_for(ModelKind::S4, 2, 1));
  CHECK(s4.lambda(0) == cplx(-0.5, 0.0));
  REQUIRE(s4.low_rank);
  CHECK(std::abs(s4.low_rank->r(0) - std::sqrt(0.5)) <= 1e-15);
  CHECK((s4.lambda.real().array() < 0).all());
  const DplrDiscrete d(s4);
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(Eigen::MatrixXcd(d.dense_transition()));
  CHECK(es.eigenvalues().cwiseAbs().maxCoeff() < 1.0);

  const ContinuousSystem s4d = init_s4d(spec_for(ModelKind::S4D, 8, 1));
  CHECK((s4d.lambda.real().array() < 0).all());
  ContinuousSystem z = s4d;
  z.delta = 1e-2;
  CHECK(zoh(z).abar.cwiseAbs().maxCoeff() < 1.0);
  CHECK_THROWS_AS(init_s4d(spec_for(ModelKind::S4D, 7, 1)), std::invalid_argument);
  CHECK_THROWS_AS(init_s4(spec_for(ModelKind::S4, 5, 1)), std::invalid_argument);
}

TEST_CASE("S5 block stacking") {
  const ContinuousSystem one = init_s5(spec_for(ModelKind::S5, 8, 3), 1);
  CHECK(one.lambda == s4d_lin_spectrum(8));
  const ContinuousSystem two = init_s5(spec_for(ModelKind::S5, 8, 3), 2);
  const CVec block = s4d_lin_spectrum(4);
  // free halves of both blocks first, conjugates after
  CVec want(8);
  want << block.head(2), block.head(2), block.head(2).conjugate(), block.head(2).conjugate();
  CHECK(two.lambda == want);
  for (int i = 0; i < 8; ++i) CHECK(two.B.row(i).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(init_s5(spec_for(ModelKind::S5, 8, 3), 3), std::invalid_argument);
}

TEST_CASE("LRU ring") {
  InitSpec s = spec_for(ModelKind::LRU, 4000, 1, 7);
  const DiscreteSystem sys = init_lru(s);
  double mean_sq = 0.0;
  for (int i = 0; i < sys.state_size(); ++i) {
    const double r = std::abs(sys.abar(i));
    CHECK(r >= s.lru_ring.r_min - 1e-12);
    CHECK(r <= s.lru_ring.r_max + 1e-12);
    mean_sq += r * r / sys.state_size();
  }
  const double expected = (0.9 * 0.9 + 0.999 * 0.999) / 2;
  CHECK(std::abs(mean_sq - expected) / expected < 0.01);

  // Kolmogorov-Smirnov against the uniform-in-r^2 law
  std::vector<double> u;
  for (int i = 0; i < sys.state_size(); ++i)
    u.push_back((std::norm(sys.abar(i)) - 0.81) / (0.999 * 0.999 - 0.81));
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    ks = std::max({ks, std::abs(u[i] - double(i) / u.size()), std::abs(u[i] - double(i + 1) / u.size())});
  CHECK(ks < 0.03);  // 1.36 / sqrt(4000) ~ 0.0215 at the 5% level

  // nu = 0, theta = pi / 2 -> abar = e^-1 i
  const cplx a = std::exp(cplx(-std::exp(0.0), std::numbers::pi / 2));
  CHECK(std::abs(a - cplx(0.0, std::exp(-1.0))) <= 1e-15);

  s.lru_ring.r_min = s.lru_ring.r_max;
  CHECK_THROWS_AS(init_lru(s), std::invalid_argument);
}

TEST_CASE("S6 initialization and parameters") {
  const S6Model m = init_s6(spec_for(ModelKind::S6, 3, 2));
  CHECK(m.lambda == (RVec(3) << -1, -2, -3).finished());

  S6Model z = m;
  z.delta_bias = 0.0;
  const TimeVaryingParams tv = s6_compute_params(z, Sequence::zeros(4, 2));
  for (int k = 0; k < 4; ++k) {
    CHECK(std::abs(tv.delta(k) - std::log(2.0)) <= 1e-15);
    CHECK(std::abs(tv.abar_seq(k, 0) - 0.5) <= 1e-15);
    CHECK(std::abs(tv.abar_seq(k, 1) - 0.25) <= 1e-15);
  }
  // softplus guard and monotonicity
  CHECK(std::isfinite(softplus(1000.0)));
  CHECK(softplus(1000.0) == doctest::Approx(1000.0));
  CHECK(softplus(0.3) < softplus(0.31));

  const TimeVaryingParams tr = s6_compute_params(m, noise(3, 50, 2, 5.0));
  CHECK((tr.abar_seq.array() > 0).all());
  CHECK((tr.abar_seq.array() < 1).all());
}

TEST_CASE("S6 forward") {
  const S6Model m = init_s6(spec_for(ModelKind::S6, 4, 3, 5));
  SUBCASE("no state excitation") {
    S6Model z = m;
    z.w_b.setZero();
    const Sequence u = noise(4, 30, 3);
    const RMat y = s6_forward(z, u).data();
    CHECK((y - u.data() * z.d.asDiagonal()).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("constant input collapses to a frozen LTI system") {
    const RVec c = (RVec(3) << 0.3, -1.2, 0.7).finished();
    RMat ud(40, 3);
    for (int k = 0; k < 40; ++k) ud.row(k) = c.transpose();
    const Sequence u(ud);
    const double dt = softplus(m.w_delta.row(0).dot(c) + m.delta_bias);
    const RVec b = m.w_b * c, cc = m.w_c * c;
    // channel j: state n, abar = exp(dt lambda), bbar = (exp(dt lambda) - 1) / lambda * b, cbar = cc
    RMat y_ref(40, 3);
    for (int j = 0; j < 3; ++j) {
      DiscreteSystem s;
      s.abar = (dt * m.lambda.array()).exp().matrix().cast<cplx>();
      s.bbar = ((dt * m.lambda.array()).exp() - 1.0).cwiseQuotient(m.lambda.array()).cwiseProduct(b.array()).matrix().cast<cplx>();
      s.cbar = cc.transpose().cast<cplx>();
      s.dbar = RVec::Constant(1, m.d(j));
      y_ref.col(j) = run_recurrent(s, Sequence(RMat(ud.col(j)))).data().col(0);
    }
    CHECK(max_rel_diff(s6_forward(m, u).data(), y_ref) <= 1e-10);
  }
}

TEST_CASE("RG-LRU") {
  RgLruModel m = init_rglru(spec_for(ModelKind::RGLRU, 4, 4));
  CHECK(m.c == 8.0);
  CHECK_THROWS_AS(init_rglru(spec_for(ModelKind::RGLRU, 4, 3)), std::invalid_argument);

  // rest band at zero input
  const TimeVaryingParams rest = rglru_compute_params(m, Sequence::zeros(3, 4));
  CHECK((rest.abar_seq.array() >= 0.9 - 1e-12).all());
  CHECK((rest.abar_seq.array() <= 0.999 + 1e-12).all());

  RgLruModel z = m;
  z.w_a.setZero();
  z.w_delta.setZero();
  z.w_b.setZero();
  const TimeVaryingParams tv = rglru_compute_params(z, Sequence(RMat::Ones(2, 4)));
  CHECK(std::abs(tv.abar_seq(0, 0) - 0.0625) <= 1e-15);
  CHECK(std::abs(tv.drive_seq(0, 0) - std::sqrt(1 - 0.0625 * 0.0625) * 0.5) <= 1e-15);
  CHECK(tv.drive_seq(0, 0) == doctest::Approx(0.499023).epsilon(1e-6));

  // gates stay in (0, 1) and the state stays bounded
  for (int s = 0; s < 20; ++s) {
    const Sequence u = noise(50 + s, 100, 4, 3.0);
    const TimeVaryingParams t = rglru_compute_params(m, u);
    CHECK((t.abar_seq.array() > 0).all());
    CHECK((t.abar_seq.array() < 1).all());
    CHECK(rglru_forward(m, u).data().cwiseAbs().maxCoeff() <= std::sqrt(2.0) * u.data().cwiseAbs().maxCoeff());
  }

  // constant input: frozen LTI
  RMat ud = RMat::Constant(25, 4, 0.4);
  const TimeVaryingParams f = rglru_compute_params(m, Sequence(ud));
  RMat y_ref(25, 4);
  for (int i = 0; i < 4; ++i) {
    double x = 0;
    for (int k = 0; k < 25; ++k) y_ref(k, i) = x = f.abar_seq(0, i) * x + f.drive_seq(0, i);
  }
  CHECK(max_rel_diff(rglru_forward(m, Sequence(ud)).data(), y_ref) <= 1e-10);
}

TEST_CASE("LTI cores: modes agree") {
  for (ModelKind k : {ModelKind::S4, ModelKind::S4D, ModelKind::S5, ModelKind::LRU}) {
    CAPTURE(to_string(k));
    const AnyModel any = init_model(spec_for(k, 8, 3, 9), k == ModelKind::S5 ? 2 : 1);
    const LtiModel& m = std::get<LtiModel>(any);
    const Sequence u = noise(10, 200, 3);
    const RMat rec = lti_forward(m, u, ExecMode::recurrent).data();
    if (k == ModelKind::S4) CHECK_THROWS_AS(lti_forward(m, u, ExecMode::scan), std::invalid_argument);
    else CHECK(max_rel_diff(lti_forward(m, u, ExecMode::scan, 2).data(), rec) <= 1e-10);
    CHECK(max_rel_diff(lti_forward(m, u, ExecMode::conv).data(), rec) <= 1e-8);
    CHECK(lti_forward(m, Sequence::zeros(10, 3), ExecMode::conv).data().cwiseAbs().maxCoeff() == 0.0);
    // superposition
    const Sequence v = noise(11, 200, 3);
    const RMat lin = lti_forward(m, Sequence(u.data() + 2 * v.data()), ExecMode::recurrent).data();
    CHECK(max_rel_diff(lin, rec + 2 * lti_forward(m, v, ExecMode::recurrent).data()) <= 1e-10);
  }
  CHECK(std::get<LtiModel>(init_model(spec_for(ModelKind::S4D, 4, 1))).preferred_mode() == ExecMode::conv);
  CHECK(std::get<LtiModel>(init_model(spec_for(ModelKind::LRU, 4, 1))).preferred_mode() == ExecMode::scan);
}

TEST_CASE("S4D bank equals the block-diagonal MIMO system") {
  const LtiModel m = std::get<LtiModel>(init_model(spec_for(ModelKind::S4D, 2, 1, 4)));
  const DiscreteSystem mimo = to_mimo(m);
  const auto bank = discretize_bank(m);
  REQUIRE(bank.size() == 1);
  const Sequence u = noise(2, 64, 1);
  CHECK(max_rel_diff(run_recurrent(mimo, u).data(), run_recurrent(bank[0], u).data()) <= 1e-10);
  // An S5 core built from the same continuous system gives the same output.
  LtiModel s5{ModelKind::S5, std::get<SisoBank>(m.params).channels[0], Discretization::zoh};
  CHECK(max_rel_diff(lti_forward(s5, u, ExecMode::scan).data(), lti_forward(m, u, ExecMode::recurrent).data()) <= 1e-10);
}

TEST_CASE("time-varying cores are not linear") {
  const AnyModel s6 = init_model(spec_for(ModelKind::S6, 4, 2, 3));
  const Sequence u = noise(1, 30, 2), v = noise(2, 30, 2);
  const RMat sum = forward(s6, Sequence(u.data() + v.data())).data();
  CHECK(max_rel_diff(sum, forward(s6, u).data() + forward(s6, v).data()) > 1e-3);
}

TEST_CASE("initial eigenvalues lie in the unit disk") {
  for (int seed = 0; seed < 100; ++seed)
    for (ModelKind k : {ModelKind::S4, ModelKind::S4D, ModelKind::S5, ModelKind::LRU, ModelKind::S6, ModelKind::RGLRU}) {
      const InitSpec s = spec_for(k, 8, k == ModelKind::RGLRU ? 8 : 2, seed);
      const AnyModel m = init_model(s, k == ModelKind::S5 ? 2 : 1);
      std::vector<Sequence> in;
      if (is_time_varying(k)) in.push_back(noise(seed, 16, s.q, 2.0));
      for (const auto& pt : eig_scatter(m, in)) CHECK(std::abs(pt.z) <= 1.0 + 1e-12);
    }
}

TEST_CASE("eigenvalue scatter") {
  S6Model m = init_s6(spec_for(ModelKind::S6, 2, 1));
  m.w_delta.setZero();
  m.delta_bias = 0.0;
  const auto pts = eig_scatter(AnyModel(m), {noise(1, 3, 1)});
  std::set<double> vals;
  for (const auto& p : pts) vals.insert(std::round(p.z.real() * 1e12) / 1e12);
  CHECK(vals == std::set<double>{0.25, 0.5});

  const AnyModel s6 = init_model(spec_for(ModelKind::S6, 4, 2, 2));
  const auto two = eig_scatter(s6, {noise(1, 20, 2), noise(2, 20, 2, 3.0)});
  std::set<double> a, b;
  for (const auto& p : two) (p.input_id == 0 ? a : b).insert(p.z.real());
  CHECK(a != b);

  const auto lru = eig_scatter(init_model(spec_for(ModelKind::LRU, 32, 2)), {});
  for (const auto& p : lru) {
    CHECK(std::abs(p.z) >= 0.9 - 1e-12);
    CHECK(std::abs(p.z) <= 0.999 + 1e-12);
  }
  CHECK_THROWS(eig_scatter(s6, {}));
}

TEST_CASE("init determinism and json round trip") {
  for (ModelKind k : {ModelKind::S4, ModelKind::S4D, ModelKind::S5, ModelKind::LRU, ModelKind::S6, ModelKind::RGLRU}) {
    const InitSpec s = spec_for(k, 4, k == ModelKind::RGLRU ? 4 : 2, 77);
    const AnyModel a = init_model(s), b = init_model(s);
    CHECK(to_json(a).dump() == to_json(b).dump());
    const AnyModel c = model_from_json(to_json(a));
    CHECK(to_json(c).dump() == to_json(a).dump());
    const Sequence u = noise(5, 12, s.q);
    CHECK(max_rel_diff(forward(c, u).data(), forward(a, u).data()) == 0.0);
  }
  InitSpec bad = spec_for(ModelKind::LRU, 4, 1);
  bad.delta_range = {0.5, 0.1};
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}
