#include <doctest.h>

#include <cmath>
#include <random>

#include "ssm/discretize.hpp"
#include "ssm/json_io.hpp"

using namespace ssm;

namespace {

ContinuousSystem scalar_system(cplx lambda, double delta, cplx b = 1.0) {
  ContinuousSystem s;
  s.lambda = CVec::Constant(1, lambda);
  s.B = CMat::Constant(1, 1, b);
  s.C = CMat::Ones(1, 1);
  s.D = RVec::Zero(1);
  s.delta = delta;
  return s;
}

// Dense bilinear discretization, the oracle for the Sherman-Morrison path.
std::pair<Eigen::MatrixXcd, Eigen::MatrixXcd> dense_bilinear(const ContinuousSystem& s) {
  const int p = s.state_size();
  Eigen::MatrixXcd A = s.lambda.asDiagonal();
  if (s.low_rank) A += s.low_rank->r * s.low_rank->s.adjoint();
  const Eigen::MatrixXcd I = Eigen::MatrixXcd::Identity(p, p);
  const double h = s.delta / 2;
  const Eigen::MatrixXcd inv = (I - h * A).inverse();
  return {inv * (I + h * A), inv * (s.delta * Eigen::MatrixXcd(s.B))};
}

}  // namespace

TEST_CASE("bilinear scalar values") {
  // 0.95 / 1.05 in long double
  const long double golden = 0.95L / 1.05L;
  const DiscreteSystem d = bilinear(scalar_system(-1.0, 0.1));
  CHECK(std::abs(d.abar(0).real() - static_cast<double>(golden)) <= 1e-12);
  CHECK(d.abar(0).real() == doctest::Approx(0.904761904761905).epsilon(1e-14));
  CHECK(std::abs(d.bbar(0, 0) - cplx(0.1 / 1.05)) <= 1e-15);

  const DiscreteSystem z = bilinear(scalar_system(0.0, 0.1));
  CHECK(z.abar(0) == cplx(1.0));
  CHECK(std::abs(z.bbar(0, 0) - cplx(0.1)) <= 1e-16);
}

TEST_CASE("zoh scalar values") {
  const DiscreteSystem d = zoh(scalar_system(-1.0, 0.1));
  CHECK(std::abs(d.abar(0) - cplx(std::exp(-0.1L))) <= 1e-12);
  CHECK(d.abar(0).real() == doctest::Approx(0.904837418035960).epsilon(1e-14));
  CHECK(std::abs(d.bbar(0, 0) - cplx(0.0951625819640404)) <= 1e-14);

  // lambda -> 0 limit: bbar -> delta * B
  CHECK(std::abs(zoh(scalar_system(0.0, 0.1)).bbar(0, 0) - cplx(0.1)) <= 1e-16);
  CHECK(std::abs(zoh(scalar_system(1e-9, 0.1)).bbar(0, 0) - cplx(0.1)) <= 1e-10);

  const DiscreteSystem half = zoh(scalar_system(-std::log(2.0) / 0.3, 0.3));
  CHECK(std::abs(half.abar(0) - cplx(0.5)) <= 1e-15);
}

TEST_CASE("expm1_over is smooth across the series threshold") {
  for (double z : {-2e-4, -1.0001e-4, -0.9999e-4, -1e-8, 0.0, 1e-8, 0.9999e-4, 1.0001e-4, 3e-4}) {
    // series to many terms in long double as the oracle
    long double term = 1.0L, sum = 0.0L;
    for (int k = 1; k < 30; ++k) {
      sum += term;
      term *= static_cast<long double>(z) / (k + 1);
    }
    CHECK(std::abs(expm1_over(z) - static_cast<double>(sum)) <= 1e-15);
    CHECK(std::abs(expm1_over(cplx(z, 0.0)) - cplx(static_cast<double>(sum))) <= 1e-15);
  }
  const cplx w(0.3, -2.0);
  CHECK(std::abs(expm1_over(w) - (std::exp(w) - 1.0) / w) <= 1e-14);
}

TEST_CASE("left half-plane maps into the unit disk") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> re(-50.0, -1e-6), im(-100.0, 100.0), dt(1e-4, 2.0);
  for (int i = 0; i < 100; ++i) {
    const cplx lam(re(rng), im(rng));
    const double delta = dt(rng);
    CHECK(std::abs(bilinear(scalar_system(lam, delta)).abar(0)) < 1.0);
    CHECK(std::abs(zoh(scalar_system(lam, delta)).abar(0)) < 1.0);
  }
}

TEST_CASE("small-step consistency (abar - 1) / delta -> lambda") {
  const cplx lam(-0.7, 2.3);
  for (double delta : {1e-3, 1e-4}) {
    const cplx b = (bilinear(scalar_system(lam, delta)).abar(0) - 1.0) / delta;
    const cplx z = (zoh(scalar_system(lam, delta)).abar(0) - 1.0) / delta;
    // first-order error in delta
    CHECK(std::abs(b - lam) <= 10 * delta);
    CHECK(std::abs(z - lam) <= 10 * delta);
  }
  // Richardson: halving the step halves the zoh error
  const auto err = [&](double d) { return std::abs((zoh(scalar_system(lam, d)).abar(0) - 1.0) / d - lam); };
  CHECK(err(1e-3) / err(5e-4) == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("singular bilinear pivot is reported with its index") {
  ContinuousSystem s = scalar_system(-1.0, 0.1);
  s.lambda = CVec(2);
  s.lambda << -1.0, 20.0;  // 1 - 0.05 * 20 = 0
  s.B = CMat::Ones(2, 1);
  s.C = CMat::Ones(1, 2);
  try {
    bilinear(s);
    FAIL("expected DiscretizationError");
  } catch (const DiscretizationError& e) {
    CHECK(e.index() == 1);
  }
}

TEST_CASE("DPLR with zero low-rank term equals diagonal bilinear") {
  ContinuousSystem s = scalar_system(cplx(-0.5, 3.0), 0.05, cplx(0.3, -1.0));
  s.low_rank = LowRank{CVec::Zero(1), CVec::Zero(1)};
  const DplrDiscrete d(s);
  s.low_rank.reset();
  const DiscreteSystem ref = bilinear(s);
  CHECK(std::abs(d.dense_transition()(0, 0) - ref.abar(0)) <= 1e-15);
  CHECK(std::abs(d.bbar()(0, 0) - ref.bbar(0, 0)) <= 1e-15);
}

TEST_CASE("DPLR Sherman-Morrison matches the dense oracle") {
  SUBCASE("worked p = 2 instance") {
    ContinuousSystem s;
    s.lambda = CVec(2);
    s.lambda << -1.0, -2.0;
    s.low_rank = LowRank{CVec::Unit(2, 0), CVec::Unit(2, 0)};
    s.B = CMat::Ones(2, 1);
    s.C = CMat::Ones(1, 2);
    s.D = RVec::Zero(1);
    s.delta = 0.1;
    const auto [abar, bbar] = dense_bilinear(s);
    const DplrDiscrete d(s);
    CHECK((d.dense_transition() - CMat(abar)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((d.bbar() - CMat(bbar)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("random instances p <= 8") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int p = 1; p <= 8; ++p) {
      ContinuousSystem s;
      s.lambda = CVec::NullaryExpr(p, [&] { return cplx(-std::abs(g(rng)) - 0.05, 3 * g(rng)); });
      s.low_rank = LowRank{CVec::NullaryExpr(p, [&] { return cplx(g(rng), g(rng)); }),
                           CVec::NullaryExpr(p, [&] { return cplx(g(rng), g(rng)); })};
      s.B = CMat::NullaryExpr(p, 3, [&] { return cplx(g(rng), g(rng)); });
      s.C = CMat::NullaryExpr(3, p, [&] { return cplx(g(rng), g(rng)); });
      s.D = RVec::Zero(3);
      s.delta = 0.02;
      const auto [abar, bbar] = dense_bilinear(s);
      const DplrDiscrete d(s);
      const double scale = abar.cwiseAbs().maxCoeff();
      CHECK((d.dense_transition() - CMat(abar)).cwiseAbs().maxCoeff() <= 1e-12 * scale);
      CHECK((d.bbar() - CMat(bbar)).cwiseAbs().maxCoeff() <= 1e-12 * bbar.cwiseAbs().maxCoeff());
      const CVec v = CVec::NullaryExpr(p, [&] { return cplx(g(rng), g(rng)); });
      CHECK((d.apply_transition(v) - abar * v).cwiseAbs().maxCoeff() <= 1e-12 * scale * v.cwiseAbs().maxCoeff());
    }
  }
}

TEST_CASE("time-varying zoh") {
  SUBCASE("constant step collapses to zoh") {
    ContinuousSystem s;
    s.lambda = CVec(3);
    s.lambda << cplx(-0.5, 1.0), cplx(-0.5, -1.0), -2.0;
    s.B = CMat::NullaryExpr(3, 2, [](Eigen::Index i, Eigen::Index j) { return cplx(0.1 * i + 1, j); });
    s.C = CMat::Ones(2, 3);
    s.D = RVec::Zero(2);
    s.delta = 0.3;
    const DiscreteSystem ref = zoh(s);
    const auto tv = zoh_timevarying(s.lambda, RVec::Constant(5, 0.3), std::vector<CMat>(5, s.B));
    for (int k = 0; k < 5; ++k) {
      CHECK((tv.abar.row(k).transpose() - ref.abar).cwiseAbs().maxCoeff() == 0.0);
      CHECK((tv.bbar[k] - ref.bbar).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("lambda = -1, delta = ln 2") {
    const auto tv = zoh_timevarying(CVec::Constant(1, -1.0), RVec::Constant(1, std::log(2.0)), {CMat::Ones(1, 1)});
    CHECK(std::abs(tv.abar(0, 0) - cplx(0.5)) <= 1e-15);
    CHECK(std::abs(tv.bbar[0](0, 0) - cplx(0.5)) <= 1e-15);
  }
  SUBCASE("random streams match a per-step loop") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    const CVec lam = CVec::NullaryExpr(4, [&] { return cplx(-u(rng), u(rng)); });
    RVec dt(16);
    std::vector<CMat> bs;
    for (int k = 0; k < 16; ++k) {
      dt(k) = u(rng);
      bs.push_back(CMat::NullaryExpr(4, 2, [&] { return cplx(u(rng), -u(rng)); }));
    }
    const auto tv = zoh_timevarying(lam, dt, bs);
    for (int k = 0; k < 16; ++k)
      for (int i = 0; i < 4; ++i) {
        const cplx a = std::exp(dt(k) * lam(i));
        CHECK(std::abs(tv.abar(k, i) - a) <= 1e-15);
        for (int j = 0; j < 2; ++j) CHECK(std::abs(tv.bbar[k](i, j) - (a - 1.0) / lam(i) * bs[k](i, j)) <= 1e-14);
      }
  }
  CHECK_THROWS_AS(zoh_timevarying(CVec::Constant(1, -1.0), RVec::Constant(1, 0.0), {CMat::Ones(1, 1)}),
                  std::invalid_argument);
}

TEST_CASE("system validation and json") {
  DiscreteSystem d = zoh(scalar_system(-1.0, 0.1));
  CHECK(validate_system(d).empty());
  d.abar(0) = 1.2;
  const auto v = validate_system(d);
  REQUIRE(v.size() == 1);
  CHECK(v[0].index == 0);
  CHECK(validate_system(d, {.memory = false}).empty());

  const ContinuousSystem c = scalar_system(cplx(-0.25, 4.0), 0.01, cplx(1.0, 2.0));
  const ContinuousSystem back = continuous_from_json(to_json(c));
  CHECK(back.lambda == c.lambda);
  CHECK(back.B == c.B);
  CHECK(back.delta == c.delta);
  CHECK_THROWS(Sequence(RMat::Constant(2, 1, std::nan(""))));
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}
