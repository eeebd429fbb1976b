#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ssm/scaffold.hpp"

using namespace ssm;

namespace {

RMat noise(std::uint64_t seed, int r, int c) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  return RMat::NullaryExpr(r, c, [&] { return n(rng); });
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Scaffold oracle written row by row from the defining formulas.
RMat scaffold_oracle(const Scaffold& sc, const CoreFn& core, const RMat& u) {
  const int T = static_cast<int>(u.rows()), q = static_cast<int>(u.cols());
  RMat pre = RMat::Zero(T, q), low = RMat::Zero(T, q);
  for (int k = 0; k < T; ++k) {
    for (int j = 0; j < q; ++j) {
      double a = 0, b = 0;
      for (int i = 0; i < q; ++i) {
        if (sc.kind != ScaffoldKind::H3) a += sc.w_in(j, i) * u(k, i);
        if (sc.kind != ScaffoldKind::MLP) b += sc.w_low(j, i) * u(k, i);
      }
      switch (sc.kind) {
        case ScaffoldKind::MLP: pre(k, j) = a; low(k, j) = u(k, j); break;
        case ScaffoldKind::H3: pre(k, j) = u(k, j) + (k >= sc.shift ? u(k - sc.shift, j) : 0.0); low(k, j) = b; break;
        case ScaffoldKind::Mamba: pre(k, j) = a; low(k, j) = b * sig(b); break;
      }
    }
  }
  if (sc.kind == ScaffoldKind::Mamba) {
    RMat c = RMat::Zero(T, q);
    for (int k = 0; k < T; ++k)
      for (int j = 0; j < q; ++j)
        for (int i = 0; i < sc.conv.cols() && i <= k; ++i) c(k, j) += sc.conv(j, i) * pre(k - i, j);
    pre = c;
  }
  const RMat up = core(Sequence(pre)).data();
  RMat out = RMat::Zero(T, q);
  for (int k = 0; k < T; ++k) {
    std::vector<double> z(q);
    for (int j = 0; j < q; ++j) {
      z[j] = 0;
      for (int i = 0; i < q; ++i) z[j] += sc.w_gate(j, i) * low(k, i);
    }
    if (sc.gate == GateNonlinearity::softmax) {
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0;
      for (double& v : z) s += (v = std::exp(v - m));
      for (double& v : z) v /= s;
    } else {
      for (double& v : z) v = sc.gate == GateNonlinearity::sigmoid ? sig(v) : v * sig(v);
    }
    for (int j = 0; j < q; ++j) {
      double acc = 0;
      for (int i = 0; i < q; ++i) acc += sc.w_out(j, i) * up(k, i) * (sc.force_open ? 1.0 : z[i]);
      out(k, j) = acc;
    }
  }
  return out;
}

CoreFn lti_core(const AnyModel& m) {
  return [m](const Sequence& u) { return forward(m, u); };
}

}  // namespace

TEST_CASE("gate examples") {
  const RVec x1 = (RVec(2) << 2, 4).finished(), x2 = (RVec(2) << 7, -3).finished();
  const RVec half = (RVec(2) << 1, 2).finished();
  CHECK(gate(x1, x2, RMat::Zero(2, 2), GateNonlinearity::sigmoid).isApprox(half, 1e-15));
  CHECK(gate(x1, x2, RMat::Zero(2, 2), GateNonlinearity::softmax).isApprox(half, 1e-15));
  const RVec x4 = (RVec(4) << 1, -2, 3, 8).finished();
  CHECK(gate(x4, x4, RMat::Zero(4, 4), GateNonlinearity::softmax).isApprox(x4 / 4, 1e-15));
  CHECK(gate(x4, x4, RMat::Zero(4, 4), GateNonlinearity::silu).isZero());
  // softmax weights sum to one whatever W is
  const RMat w = noise(1, 4, 4);
  const RVec ones = RVec::Ones(4);
  CHECK(gate(ones, x4, w, GateNonlinearity::softmax).sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(gate(x1, x4, RMat::Zero(2, 4), GateNonlinearity::sigmoid), std::invalid_argument);
}

TEST_CASE("time shift") {
  const Sequence u(noise(2, 10, 3));
  CHECK(time_shift(u, 0).data() == u.data());
  const RMat y = time_shift(u, 3).data();
  CHECK(y.topRows(3).isZero());
  CHECK(y.bottomRows(7) == u.data().topRows(7));
  CHECK(time_shift(time_shift(u, 2), 5).data() == time_shift(u, 7).data());
  CHECK(time_shift(u, 10).data().isZero());
  CHECK(time_shift(u, 25).data().isZero());
  CHECK_THROWS_AS(time_shift(u, -1), std::invalid_argument);
}

TEST_CASE("causal conv") {
  const Sequence u(noise(3, 12, 2));
  RMat id = RMat::Zero(2, 4);
  id.col(0).setOnes();
  CHECK(causal_conv1d(u, id).data() == u.data());
  RMat delay = RMat::Zero(2, 3);
  delay.col(2).setOnes();
  CHECK(causal_conv1d(u, delay).data() == time_shift(u, 2).data());
  const RMat k = noise(4, 2, 5);
  const RMat y = causal_conv1d(u, k).data();
  for (int t = 0; t < 12; ++t)
    for (int j = 0; j < 2; ++j) {
      double s = 0;
      for (int i = 0; i <= t; ++i) s += (i < 5 ? k(j, i) : 0.0) * u(t - i, j);
      CHECK(y(t, j) == doctest::Approx(s).epsilon(1e-13));
    }
  CHECK_THROWS_AS(causal_conv1d(u, RMat::Ones(3, 2)), std::invalid_argument);
}

TEST_CASE("scaffolds match the row-wise oracle") {
  const int q = 4;
  const Sequence u(noise(5, 30, q));
  for (ModelKind mk : {ModelKind::S4D, ModelKind::LRU, ModelKind::S6}) {
    InitSpec spec;
    spec.model_kind = mk;
    spec.p = 4;
    spec.q = q;
    spec.seed = 11;
    const CoreFn core = lti_core(init_model(spec));
    for (ScaffoldKind sk : {ScaffoldKind::MLP, ScaffoldKind::H3, ScaffoldKind::Mamba})
      for (GateNonlinearity g : {GateNonlinearity::sigmoid, GateNonlinearity::softmax, GateNonlinearity::silu}) {
        CAPTURE(to_string(mk));
        CAPTURE(to_string(sk));
        CAPTURE(to_string(g));
        const Scaffold sc = init_scaffold(sk, g, q, 6, 2, 3);
        const RMat ref = scaffold_oracle(sc, core, u.data());
        CHECK((scaffold_forward(sc, core, u).data() - ref).cwiseAbs().maxCoeff() <= 1e-12 * (1 + ref.cwiseAbs().maxCoeff()));
      }
  }
}

TEST_CASE("scaffold reductions") {
  const int q = 3;
  const Sequence u(noise(7, 20, q));
  InitSpec spec;
  spec.p = 4;
  spec.q = q;
  const CoreFn core = lti_core(init_model(spec));
  const RMat I = RMat::Identity(q, q);

  Scaffold mlp = init_scaffold(ScaffoldKind::MLP, GateNonlinearity::sigmoid, q, 1);
  mlp.force_open = true;
  mlp.w_in = mlp.w_out = I;
  CHECK(scaffold_forward(mlp, core, u).data().isApprox(core(u).data(), 1e-14));

  Scaffold h3 = init_scaffold(ScaffoldKind::H3, GateNonlinearity::sigmoid, q, 1, 0);
  h3.force_open = true;
  h3.w_out = I;
  // shift 0 doubles the input; the core is linear
  CHECK(scaffold_forward(h3, core, u).data().isApprox(2 * core(u).data(), 1e-12));

  Scaffold mb = init_scaffold(ScaffoldKind::Mamba, GateNonlinearity::sigmoid, q, 1);
  mb.force_open = true;
  mb.w_in = mb.w_out = I;
  mb.conv.setZero();
  mb.conv.col(0).setOnes();
  CHECK(scaffold_forward(mb, core, u).data().isApprox(core(u).data(), 1e-14));

  // a closed gate (sigmoid of a huge negative) silences the layer
  Scaffold shut = init_scaffold(ScaffoldKind::MLP, GateNonlinearity::sigmoid, q, 2);
  shut.w_gate = -1e4 * I;
  const Sequence pos(RMat(noise(8, 20, q).cwiseAbs().array() + 0.1));
  CHECK(scaffold_forward(shut, core, pos).data().cwiseAbs().maxCoeff() <= 1e-100);
}

TEST_CASE("causality: future inputs never reach past outputs") {
  const int q = 3, T = 24, k0 = 13;
  const RMat base = noise(9, T, q);
  RMat bumped = base;
  bumped.row(k0) += RMat::Constant(1, q, 5.0);
  for (ModelKind mk : {ModelKind::S4, ModelKind::S4D, ModelKind::S5, ModelKind::LRU, ModelKind::S6, ModelKind::RGLRU}) {
    InitSpec spec;
    spec.model_kind = mk;
    spec.p = mk == ModelKind::RGLRU ? q : 4;
    spec.q = q;
    const CoreFn core = lti_core(init_model(spec));
    for (ScaffoldKind sk : {ScaffoldKind::MLP, ScaffoldKind::H3, ScaffoldKind::Mamba}) {
      CAPTURE(to_string(mk));
      CAPTURE(to_string(sk));
      const Scaffold sc = init_scaffold(sk, GateNonlinearity::softmax, q, 3, 2, 4);
      const RMat a = scaffold_forward(sc, core, Sequence(base)).data();
      const RMat b = scaffold_forward(sc, core, Sequence(bumped)).data();
      // FFT-based cores round every output slightly differently, so compare with a tolerance
      CHECK((a.topRows(k0) - b.topRows(k0)).cwiseAbs().maxCoeff() <= 1e-13);
      CHECK((a.row(k0) - b.row(k0)).cwiseAbs().maxCoeff() > 1e-6);
    }
  }
}

TEST_CASE("tape scaffold agrees with the plain one") {
  const int q = 3;
  const RMat u = noise(12, 16, q);
  for (ScaffoldKind sk : {ScaffoldKind::MLP, ScaffoldKind::H3, ScaffoldKind::Mamba}) {
    CAPTURE(to_string(sk));
    InitSpec spec;
    spec.model_kind = ModelKind::S6;
    spec.p = 4;
    spec.q = q;
    const AnyModel m = init_model(spec);
    const Scaffold sc = init_scaffold(sk, GateNonlinearity::sigmoid, q, 4, 1, 3);
    ad::ParamStore st;
    add_core_params(st, "c.", m);
    add_scaffold_params(st, "s.", sc);
    ad::Tape t(false);
    const ad::SeqLayout lay{1, 16};
    auto core = [&](ad::Var v) { return core_forward(t, st, "c.", ModelKind::S6, v, lay); };
    const RMat y = scaffold_forward(t, st, "s.", sc, core, t.constant(u), lay).real();
    const RMat ref = scaffold_forward(extract_scaffold(st, "s.", sc), lti_core(extract_core(st, "c.", ModelKind::S6)), Sequence(u)).data();
    CHECK((y - ref).cwiseAbs().maxCoeff() <= 1e-12 * (1 + ref.cwiseAbs().maxCoeff()));
  }
}

namespace {

RMat rms(const RMat& x, const RMat& g) {
  RMat y = x;
  for (int k = 0; k < x.rows(); ++k) y.row(k) = x.row(k) / std::sqrt(x.row(k).squaredNorm() / x.cols() + 1e-6);
  return y.array().rowwise() * g.row(0).array();
}

}  // namespace

TEST_CASE("layer stack equals the layer-by-layer composition") {
  for (ScaffoldKind sk : {ScaffoldKind::MLP, ScaffoldKind::H3, ScaffoldKind::Mamba}) {
    StackConfig cfg;
    cfg.model = ModelKind::LRU;
    cfg.scaffold = sk;
    cfg.layers = 2;
    cfg.p = 4;
    cfg.q = 6;
    cfg.vocab = 7;
    cfg.classes = 3;
    const LayerStack st = init_stack(cfg, 21);
    const std::vector<int> tok = {0, 3, 6, 6, 1, 2, 5, 4, 0};
    RMat x(tok.size(), cfg.q);
    const RMat emb = st.params.real("embed");
    for (std::size_t k = 0; k < tok.size(); ++k) x.row(k) = emb.row(tok[k]);
    for (int l = 0; l < cfg.layers; ++l) {
      const RMat h = rms(x, st.params.real(layer_prefix(l) + "norm"));
      x += scaffold_forward(layer_scaffold(st, l), lti_core(layer_core(st, l)), Sequence(h)).data();
    }
    x = rms(x, st.params.real("final.norm"));
    const RMat pooled = x.colwise().mean();
    const RMat logits = pooled * st.params.real("head.w").transpose() + st.params.real("head.b");
    CHECK((stack_forward(st, tok) - logits.row(0).transpose()).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("stack: zero parameters give uniform logits; head rows permute logits") {
  StackConfig cfg;
  cfg.model = ModelKind::S4D;
  cfg.scaffold = ScaffoldKind::H3;
  cfg.p = 4;
  cfg.q = 8;
  cfg.vocab = 18;
  cfg.classes = 10;
  LayerStack st = init_stack(cfg, 5);
  const std::vector<int> tok = {14, 10, 3, 16, 4, 15};
  LayerStack zero = st;
  for (double& v : zero.params.values()) v = 0.0;
  const RVec z = stack_forward(zero, tok);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);

  const RVec before = stack_forward(st, tok);
  RMat w = st.params.real("head.w");
  RMat b = st.params.real("head.b");
  const std::vector<int> perm = {3, 0, 9, 1, 2, 8, 7, 4, 6, 5};
  RMat pw = w, pb = b;
  for (int c = 0; c < 10; ++c) {
    pw.row(c) = w.row(perm[c]);
    pb(0, c) = b(0, perm[c]);
  }
  st.params.set("head.w", pw);
  st.params.set("head.b", pb);
  const RVec after = stack_forward(st, tok);
  for (int c = 0; c < 10; ++c) CHECK(after(c) == doctest::Approx(before(perm[c])).epsilon(1e-14));
}

TEST_CASE("batched forward matches per-sequence forward") {
  StackConfig cfg;
  cfg.model = ModelKind::S6;
  cfg.scaffold = ScaffoldKind::Mamba;
  cfg.p = 4;
  cfg.q = 6;
  cfg.vocab = 9;
  cfg.classes = 4;
  cfg.pooling = ad::Pooling::last;
  const LayerStack st = init_stack(cfg, 2);
  const std::vector<int> a = {1, 2, 3, 8, 8, 0, 5}, b = {4, 4}, c = {7, 6, 5, 4, 3, 2, 1, 0, 8, 8};
  const TokenBatch batch = make_batch({&a, &b, &c}, 8);
  ad::Tape t(false);
  const RMat logits = stack_forward(t, st.params, cfg, batch).real();
  int i = 0;
  for (const auto* s : {&a, &b, &c}) CHECK((logits.row(i++).transpose() - stack_forward(st, *s)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("stack config json") {
  StackConfig cfg;
  cfg.model = ModelKind::RGLRU;
  cfg.scaffold = ScaffoldKind::Mamba;
  cfg.gate = GateNonlinearity::softmax;
  cfg.layers = 3;
  cfg.pooling = ad::Pooling::last;
  const StackConfig back = stack_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  nlohmann::json j = to_json(cfg);
  j["colour"] = 1;
  CHECK_THROWS(stack_config_from_json(j));
  cfg.layers = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(parse_scaffold_kind("h3") == ScaffoldKind::H3);
  CHECK_THROWS(parse_gate("relu"));
}
