#include "ssm/core_graph.hpp"

#include <cmath>

namespace ssm {

using namespace ssm::ad;

namespace {

CMat row(const CVec& v) { return v.transpose(); }

RMat log_neg_real(const CMat& lam) { return lam.real().unaryExpr([](double x) { return std::log(-x); }); }

CMat mirror(const CMat& half) {
  CMat full(half.rows(), 2 * half.cols());
  full << half, half.conjugate();
  return full;
}

void add_bank(ParamStore& st, const std::string& pre, const LtiModel& m, double dyn) {
  const auto& bank = std::get<SisoBank>(m.params);
  const int q = static_cast<int>(bank.channels.size());
  const int p = bank.channels.front().state_size();
  const int half = p / 2;
  RMat log_dt(q, 1), re_log(q, half), im(q, half), d(1, q);
  CMat b(q, half), c(q, half), r(q, half), s(q, half);
  for (int j = 0; j < q; ++j) {
    const ContinuousSystem& ch = bank.channels[j];
    if (ch.state_size() != p) throw std::invalid_argument("add_core_params: channels differ in state size");
    log_dt(j, 0) = std::log(ch.delta);
    const CMat lam = row(ch.lambda.head(half));
    re_log.row(j) = log_neg_real(lam);
    im.row(j) = lam.imag();
    b.row(j) = ch.B.col(0).head(half).transpose();
    c.row(j) = ch.C.row(0).head(half);
    d(0, j) = ch.D(0);
    if (ch.low_rank) {
      r.row(j) = ch.low_rank->r.head(half).transpose();
      s.row(j) = ch.low_rank->s.head(half).transpose();
    }
  }
  st.add(pre + "log_dt", log_dt, dyn);
  st.add(pre + "lambda_re_log", re_log, dyn);
  st.add(pre + "lambda_im", im, dyn);
  if (m.kind == ModelKind::S4) {
    st.add(pre + "r", r, dyn);
    st.add(pre + "s", s, dyn);
  }
  st.add(pre + "B", b);
  st.add(pre + "C", c);
  st.add(pre + "D", d);
}

}  // namespace

void add_core_params(ParamStore& st, const std::string& pre, const AnyModel& model, double dyn) {
  if (const auto* lti = std::get_if<LtiModel>(&model)) {
    switch (lti->kind) {
      case ModelKind::S4:
      case ModelKind::S4D: add_bank(st, pre, *lti, dyn); return;
      case ModelKind::S5: {
        if (lti->discretization != Discretization::zoh)
          throw std::invalid_argument("S5 training supports zoh discretization only");
        const auto& sys = std::get<ContinuousSystem>(lti->params);
        const int half = sys.state_size() / 2;
        const CMat lam = row(sys.lambda.head(half));
        st.add(pre + "log_dt", RMat(RMat::Constant(1, 1, std::log(sys.delta))), dyn);
        st.add(pre + "lambda_re_log", log_neg_real(lam), dyn);
        st.add(pre + "lambda_im", RMat(lam.imag()), dyn);
        st.add(pre + "B", CMat(sys.B.topRows(half)));
        st.add(pre + "C", CMat(sys.C.leftCols(half)));
        st.add(pre + "D", RMat(sys.D.transpose()));
        return;
      }
      case ModelKind::LRU: {
        const auto& sys = std::get<DiscreteSystem>(lti->params);
        const int p = sys.state_size();
        RMat nu(1, p), theta(1, p), gamma(1, p);
        CMat big_gamma(p, sys.channels());
        for (int i = 0; i < p; ++i) {
          const double r = std::abs(sys.abar(i));
          nu(0, i) = std::log(-std::log(r));
          theta(0, i) = std::arg(sys.abar(i));
          gamma(0, i) = 0.5 * std::log(1.0 - r * r);
          big_gamma.row(i) = sys.bbar.row(i) * std::exp(-gamma(0, i));
        }
        st.add(pre + "nu_log", nu, dyn);
        st.add(pre + "theta", theta, dyn);
        st.add(pre + "gamma_log", gamma);
        st.add(pre + "B", big_gamma);
        st.add(pre + "C", sys.cbar);
        st.add(pre + "D", RMat(sys.dbar.transpose()));
        return;
      }
      default: break;
    }
    throw std::invalid_argument("add_core_params: unexpected LTI kind");
  }
  if (const auto* s6 = std::get_if<S6Model>(&model)) {
    st.add(pre + "a_log", RMat((-s6->lambda.array()).log().matrix().transpose()), dyn);
    st.add(pre + "w_delta", s6->w_delta);
    st.add(pre + "delta_bias", RMat(RMat::Constant(1, 1, s6->delta_bias)), dyn);
    st.add(pre + "w_b", s6->w_b);
    st.add(pre + "w_c", s6->w_c);
    st.add(pre + "D", RMat(s6->d.transpose()));
    return;
  }
  const auto& rg = std::get<RgLruModel>(model);
  st.add(pre + "w_a", RMat(rg.w_a.transpose()), dyn);
  st.add(pre + "w_delta", rg.w_delta);
  st.add(pre + "w_b", rg.w_b);
  // gate constant, carried for export but never updated
  st.add(pre + "c", RMat(RMat::Constant(1, 1, rg.c)), 0.0);
}

namespace {

Var lambda_of(Tape& t, const ParamStore& st, const std::string& pre) {
  return make_complex(scale(exp(t.param(st, pre + "lambda_re_log")), -1.0), t.param(st, pre + "lambda_im"));
}

Var feedthrough(Tape& t, const ParamStore& st, const std::string& pre, Var u) { return mul(u, t.param(st, pre + "D")); }

Var s4d_kernel(Tape& t, const ParamStore& st, const std::string& pre, int length) {
  Var dt = exp(t.param(st, pre + "log_dt"));
  Var z = cmul_real(lambda_of(t, st, pre), dt);
  Var abar = cexp(z);
  Var bbar = cmul_real(cmul(cphi1(z), t.param(st, pre + "B")), dt);
  // Conjugate pairs contribute twice the real part of the stored half.
  Var w = cscale(cmul(t.param(st, pre + "C"), bbar), 2.0);
  return vandermonde(w, abar, length);
}

Var s4_kernel(Tape& t, const ParamStore& st, const std::string& pre, int length) {
  Var dt = exp(t.param(st, pre + "log_dt"));
  Var h = scale(dt, 0.5);
  Var lam = mirror_cols(lambda_of(t, st, pre));
  Var r = mirror_cols(t.param(st, pre + "r"));
  Var s = mirror_cols(t.param(st, pre + "s"));
  Var b = mirror_cols(t.param(st, pre + "B"));
  Var c = mirror_cols(t.param(st, pre + "C"));
  const Eigen::Index q = lam.rows(), p = lam.cols();
  Var ones_qp = t.constant(CMat(CMat::Ones(q, p)));
  Var ones_q1 = t.constant(CMat(CMat::Ones(q, 1)));
  // Sherman-Morrison on M = diag(1 - h lambda) - h r s*, one DPLR system per row.
  Var dinv = crecip(cadd(ones_qp, cscale(cmul_real(lam, h), -1.0)));
  Var dinv_r = cmul(dinv, r);
  Var inv_den = crecip(cadd(ones_q1, cscale(cmul_real(row_dot(s, dinv_r, true), h), -1.0)));
  auto apply_inverse = [&](Var w) {
    Var dw = cmul(dinv, w);
    Var coeff = cmul(cmul_real(row_dot(s, dw, true), h), inv_den);
    return cadd(dw, cmul(dinv_r, coeff));
  };
  auto apply_transition = [&](Var v) {
    Var av = cadd(cmul(lam, v), cmul(r, row_dot(s, v, true)));
    return apply_inverse(cadd(v, cmul_real(av, h)));
  };
  Var v = apply_inverse(cmul_real(b, dt));
  std::vector<Var> taps;
  taps.reserve(length);
  for (int k = 0; k < length; ++k) {
    taps.push_back(real_part(row_dot(c, v, false)));
    if (k + 1 < length) v = apply_transition(v);
  }
  return concat_cols(taps);
}

}  // namespace

Var core_forward(Tape& t, const ParamStore& st, const std::string& pre, ModelKind kind, Var u, SeqLayout layout) {
  switch (kind) {
    case ModelKind::S4:
    case ModelKind::S4D: {
      Var k = kind == ModelKind::S4 ? s4_kernel(t, st, pre, layout.length) : s4d_kernel(t, st, pre, layout.length);
      return add(fft_conv(u, k, layout), feedthrough(t, st, pre, u));
    }
    case ModelKind::S5: {
      Var dt = exp(t.param(st, pre + "log_dt"));
      Var z = cmul_real(lambda_of(t, st, pre), dt);
      Var bbar = cmul_real(cmul(transpose(cphi1(z)), t.param(st, pre + "B")), dt);
      Var x = scan_complex(cexp(z), cmatmul_rc(u, bbar), layout);
      return add(scale(re_matmul_bt(x, t.param(st, pre + "C")), 2.0), feedthrough(t, st, pre, u));
    }
    case ModelKind::LRU: {
      Var abar = cexp(make_complex(scale(exp(t.param(st, pre + "nu_log")), -1.0), t.param(st, pre + "theta")));
      Var bbar = cmul_real(t.param(st, pre + "B"), transpose(exp(t.param(st, pre + "gamma_log"))));
      Var x = scan_complex(abar, cmatmul_rc(u, bbar), layout);
      return add(re_matmul_bt(x, t.param(st, pre + "C")), feedthrough(t, st, pre, u));
    }
    case ModelKind::S6: {
      const int q = static_cast<int>(u.cols());
      Var dt = softplus(add(linear(u, t.param(st, pre + "w_delta")), t.param(st, pre + "delta_bias")));
      Var z = mul(dt, scale(exp(t.param(st, pre + "a_log")), -1.0));
      Var bk = linear(u, t.param(st, pre + "w_b"));
      Var bbar = mul(mul(phi1(z), dt), bk);
      Var x = scan_real(tile_cols(exp(z), q), row_outer(u, bbar), layout);
      Var ck = linear(u, t.param(st, pre + "w_c"));
      return add(row_contract(x, ck), feedthrough(t, st, pre, u));
    }
    case ModelKind::RGLRU: {
      Var neg_c = scale(t.param(st, pre + "c"), -1.0);
      Var gate_a = sigmoid(linear(u, t.param(st, pre + "w_delta")));
      Var abar = exp(mul(mul(gate_a, softplus(t.param(st, pre + "w_a"))), neg_c));
      Var gate_b = sigmoid(linear(u, t.param(st, pre + "w_b")));
      return scan_real(abar, mul(mul(sqrt1m_sq(abar), gate_b), u), layout);
    }
  }
  throw std::logic_error("unreachable");
}

AnyModel extract_core(const ParamStore& st, const std::string& pre, ModelKind kind) {
  auto lam_half = [&]() {
    const RMat re = -st.real(pre + "lambda_re_log").array().exp();
    CMat lam(re.rows(), re.cols());
    lam.real() = re;
    lam.imag() = st.real(pre + "lambda_im");
    return lam;
  };
  switch (kind) {
    case ModelKind::S4:
    case ModelKind::S4D: {
      const CMat lam = mirror(lam_half());
      const CMat b = mirror(st.cplx(pre + "B")), c = mirror(st.cplx(pre + "C"));
      const RMat log_dt = st.real(pre + "log_dt"), d = st.real(pre + "D");
      SisoBank bank;
      for (Eigen::Index j = 0; j < lam.rows(); ++j) {
        ContinuousSystem ch;
        ch.lambda = lam.row(j).transpose();
        ch.B = b.row(j).transpose();
        ch.C = c.row(j);
        ch.D = RVec::Constant(1, d(0, j));
        ch.delta = std::exp(log_dt(j, 0));
        if (kind == ModelKind::S4)
          ch.low_rank = LowRank{mirror(st.cplx(pre + "r")).row(j).transpose(), mirror(st.cplx(pre + "s")).row(j).transpose()};
        bank.channels.push_back(std::move(ch));
      }
      return LtiModel{kind, std::move(bank), Discretization::zoh};
    }
    case ModelKind::S5: {
      ContinuousSystem sys;
      sys.lambda = mirror(lam_half()).row(0).transpose();
      const CMat b = st.cplx(pre + "B");
      sys.B.resize(2 * b.rows(), b.cols());
      sys.B << b, b.conjugate();
      sys.C = mirror(st.cplx(pre + "C"));
      sys.D = st.real(pre + "D").row(0).transpose();
      sys.delta = std::exp(st.real(pre + "log_dt")(0, 0));
      return LtiModel{kind, std::move(sys), Discretization::zoh};
    }
    case ModelKind::LRU: {
      const RMat nu = st.real(pre + "nu_log"), theta = st.real(pre + "theta"), gamma = st.real(pre + "gamma_log");
      const CMat big_gamma = st.cplx(pre + "B");
      DiscreteSystem sys;
      sys.abar.resize(nu.cols());
      sys.bbar.resize(big_gamma.rows(), big_gamma.cols());
      for (Eigen::Index i = 0; i < nu.cols(); ++i) {
        sys.abar(i) = std::exp(cplx(-std::exp(nu(0, i)), theta(0, i)));
        sys.bbar.row(i) = big_gamma.row(i) * std::exp(gamma(0, i));
      }
      sys.cbar = st.cplx(pre + "C");
      sys.dbar = st.real(pre + "D").row(0).transpose();
      return LtiModel{kind, std::move(sys), Discretization::zoh};
    }
    case ModelKind::S6: {
      S6Model m;
      m.lambda = -st.real(pre + "a_log").row(0).transpose().array().exp();
      m.w_delta = st.real(pre + "w_delta");
      m.delta_bias = st.real(pre + "delta_bias")(0, 0);
      m.w_b = st.real(pre + "w_b");
      m.w_c = st.real(pre + "w_c");
      m.d = st.real(pre + "D").row(0).transpose();
      return m;
    }
    case ModelKind::RGLRU: {
      RgLruModel m;
      m.w_a = st.real(pre + "w_a").row(0).transpose();
      m.w_delta = st.real(pre + "w_delta");
      m.w_b = st.real(pre + "w_b");
      m.c = st.real(pre + "c")(0, 0);
      return m;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace ssm
