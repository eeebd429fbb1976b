#include "ssm/learn/ops.hpp"

#include <cmath>
#include <stdexcept>

#include "ssm/discretize.hpp"
#include "ssm/exec.hpp"
#include "ssm/fft.hpp"

namespace ssm::ad {

namespace {

using Index = Eigen::Index;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

const RMat& rv(Var v) {
  require(!v.is_complex(), "op expects a real operand");
  return v.real();
}

CMat cv(Var v) { return v.is_complex() ? v.cplx() : CMat(v.real().cast<cplx>()); }
CMat cval(const Tape& t, int id) { return t.is_complex(id) ? t.cplx(id) : CMat(t.real(id).cast<cplx>()); }

std::pair<Index, Index> broadcast_shape(Index ra, Index ca, Index rb, Index cb) {
  auto dim = [](Index x, Index y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument("broadcast: incompatible shapes");
  };
  return {dim(ra, rb), dim(ca, cb)};
}

template <class M>
M expand(const M& m, Index r, Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  return m.replicate(r / m.rows(), c / m.cols());
}

template <class M>
M reduce_to(const M& g, Index r, Index c) {
  M out = g;
  if (r == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (c == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

Tape& same_tape(Var a, Var b) {
  require(&a.tape() == &b.tape(), "operands live on different tapes");
  return a.tape();
}

// Derivative of (e^a - 1)/a via its series near zero.
template <class S>
S phi1_derivative(S a, S phi) {
  if (std::abs(a) < 1e-2) return 0.5 + a * (1.0 / 3.0 + a * (1.0 / 8.0 + a * (1.0 / 30.0 + a * (1.0 / 144.0 + a / 840.0))));
  return (std::exp(a) - phi) / a;
}

double softplus1(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid1(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Unary real elementwise op; df(x, y) returns dy/dx.
template <class F, class DF>
Var unary(std::string_view name, Var a, F f, DF df) {
  const RMat& x = rv(a);
  RMat y = x.unaryExpr(f);
  const int ia = a.id();
  return a.tape().push(name, std::move(y), {a}, [ia, df](Tape& t, int self) {
    const RMat& x = t.real(ia);
    const RMat& y = t.real(self);
    const RMat& g = t.grad_real(self);
    RMat gx(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) gx.data()[i] = g.data()[i] * df(x.data()[i], y.data()[i]);
    t.add_grad(ia, gx);
  });
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const RMat &x = rv(a), &y = rv(b);
  auto [r, c] = broadcast_shape(x.rows(), x.cols(), y.rows(), y.cols());
  const Index ra = x.rows(), ca = x.cols(), rb = y.rows(), cb = y.cols();
  const int ia = a.id(), ib = b.id();
  return t.push("add", RMat(expand(x, r, c) + expand(y, r, c)), {a, b}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    t.add_grad(ia, reduce_to(g, ra, ca));
    t.add_grad(ib, reduce_to(g, rb, cb));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const RMat &x = rv(a), &y = rv(b);
  auto [r, c] = broadcast_shape(x.rows(), x.cols(), y.rows(), y.cols());
  const Index ra = x.rows(), ca = x.cols(), rb = y.rows(), cb = y.cols();
  const int ia = a.id(), ib = b.id();
  return t.push("sub", RMat(expand(x, r, c) - expand(y, r, c)), {a, b}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    t.add_grad(ia, reduce_to(g, ra, ca));
    t.add_grad(ib, RMat(-reduce_to(g, rb, cb)));
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const RMat &x = rv(a), &y = rv(b);
  auto [r, c] = broadcast_shape(x.rows(), x.cols(), y.rows(), y.cols());
  const Index ra = x.rows(), ca = x.cols(), rb = y.rows(), cb = y.cols();
  const int ia = a.id(), ib = b.id();
  return t.push("mul", RMat(expand(x, r, c).cwiseProduct(expand(y, r, c))), {a, b}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    const RMat ex = expand(t.real(ia), r, c), ey = expand(t.real(ib), r, c);
    t.add_grad(ia, reduce_to(RMat(g.cwiseProduct(ey)), ra, ca));
    t.add_grad(ib, reduce_to(RMat(g.cwiseProduct(ex)), rb, cb));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape().push("scale", RMat(rv(a) * s), {a},
                       [=](Tape& t, int self) { t.add_grad(ia, RMat(t.grad_real(self) * s)); });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  return a.tape().push("add_scalar", RMat(rv(a).array() + s), {a},
                       [=](Tape& t, int self) { t.add_grad(ia, t.grad_real(self)); });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const RMat &x = rv(a), &y = rv(b);
  require(x.cols() == y.rows(), "matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return t.push("matmul", RMat(x * y), {a, b}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    if (t.needs_grad(ia)) t.add_grad(ia, RMat(g * t.real(ib).transpose()));
    if (t.needs_grad(ib)) t.add_grad(ib, RMat(t.real(ia).transpose() * g));
  });
}

Var linear(Var x, Var w) {
  Tape& t = same_tape(x, w);
  const RMat &xv = rv(x), &wv = rv(w);
  require(xv.cols() == wv.cols(), "linear: input width does not match weight");
  const int ix = x.id(), iw = w.id();
  return t.push("linear", RMat(xv * wv.transpose()), {x, w}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    if (t.needs_grad(ix)) t.add_grad(ix, RMat(g * t.real(iw)));
    if (t.needs_grad(iw)) t.add_grad(iw, RMat(g.transpose() * t.real(ix)));
  });
}

Var linear(Var x, Var w, Var bias) { return add(linear(x, w), bias); }

Var transpose(Var a) {
  const int ia = a.id();
  if (a.is_complex())
    return a.tape().push("transpose", CMat(a.cplx().transpose()), {a},
                         [=](Tape& t, int self) { t.add_grad(ia, CMat(t.grad_cplx(self).transpose())); });
  return a.tape().push("transpose", RMat(a.real().transpose()), {a},
                       [=](Tape& t, int self) { t.add_grad(ia, RMat(t.grad_real(self).transpose())); });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, sigmoid1, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary("softplus", a, softplus1, [](double x, double) { return sigmoid1(x); });
}

Var silu(Var a) {
  return unary(
      "silu", a, [](double x) { return x * sigmoid1(x); },
      [](double x, double) {
        const double s = sigmoid1(x);
        return s + x * s * (1.0 - s);
      });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt1m_sq(Var a) {
  return unary(
      "sqrt1m_sq", a, [](double x) { return std::sqrt(std::max(0.0, 1.0 - x * x)); },
      [](double x, double y) { return -x / std::max(y, 1e-300); });
}

Var phi1(Var a) {
  return unary(
      "phi1", a, [](double x) { return expm1_over(x); }, [](double x, double y) { return phi1_derivative(x, y); });
}

Var softmax_rows(Var a) {
  const RMat& x = rv(a);
  RMat y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const auto e = (x.row(i).array() - x.row(i).maxCoeff()).exp();
    y.row(i) = e / e.sum();
  }
  const int ia = a.id();
  return a.tape().push("softmax_rows", std::move(y), {a}, [=](Tape& t, int self) {
    const RMat& y = t.real(self);
    const RMat& g = t.grad_real(self);
    const RVec dot = g.cwiseProduct(y).rowwise().sum();
    RMat gx = y.cwiseProduct(g);
    gx -= y.cwiseProduct(dot.replicate(1, y.cols()));
    t.add_grad(ia, gx);
  });
}


Var rms_norm(Var x, Var gain, double eps) {
  Tape& t = same_tape(x, gain);
  const RMat &xv = rv(x), &gv = rv(gain);
  require(gv.rows() == 1 && gv.cols() == xv.cols(), "rms_norm: gain must be 1 x q");
  const RVec r = ((xv.array().square().rowwise().sum() / static_cast<double>(xv.cols())) + eps).sqrt();
  const RMat n = xv.array().colwise() / r.array();
  RMat y = n.array().rowwise() * gv.row(0).array();
  const int ix = x.id(), ig = gain.id();
  return t.push("rms_norm", std::move(y), {x, gain}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    const RMat& gain = t.real(ig);
    if (t.needs_grad(ig)) t.add_grad(ig, RMat(g.cwiseProduct(n).colwise().sum()));
    if (t.needs_grad(ix)) {
      const RMat gn = g.array().rowwise() * gain.row(0).array();
      const RVec m = gn.cwiseProduct(n).rowwise().sum() / static_cast<double>(n.cols());
      RMat gx = gn - RMat(n.array().colwise() * m.array());
      gx = gx.array().colwise() / r.array();
      t.add_grad(ix, gx);
    }
  });
}

Var sum(Var a) {
  const RMat& x = rv(a);
  const Index r = x.rows(), c = x.cols();
  const int ia = a.id();
  return a.tape().push("sum", RMat(RMat::Constant(1, 1, x.sum())), {a},
                       [=](Tape& t, int self) { t.add_grad(ia, RMat(RMat::Constant(r, c, t.grad_real(self)(0, 0)))); });
}

Var mean(Var a) {
  const RMat& x = rv(a);
  const Index r = x.rows(), c = x.cols();
  const double n = static_cast<double>(x.size());
  const int ia = a.id();
  return a.tape().push("mean", RMat(RMat::Constant(1, 1, x.sum() / n)), {a},
                       [=](Tape& t, int self) { t.add_grad(ia, RMat(RMat::Constant(r, c, t.grad_real(self)(0, 0) / n))); });
}

Var embedding(Var table, const std::vector<int>& tokens) {
  const RMat& w = rv(table);
  RMat y(tokens.size(), w.cols());
  for (std::size_t n = 0; n < tokens.size(); ++n) {
    if (tokens[n] < 0 || tokens[n] >= w.rows())
      throw std::out_of_range("embedding: token " + std::to_string(tokens[n]) + " outside vocabulary of " +
                              std::to_string(w.rows()));
    y.row(n) = w.row(tokens[n]);
  }
  const int it = table.id();
  return table.tape().push("embedding", std::move(y), {table}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    RMat gw = RMat::Zero(t.real(it).rows(), t.real(it).cols());
    for (std::size_t n = 0; n < tokens.size(); ++n) gw.row(tokens[n]) += g.row(n);
    t.add_grad(it, gw);
  });
}

Var pool(Var x, SeqLayout layout, const std::vector<int>& lengths, Pooling mode) {
  const RMat& xv = rv(x);
  require(xv.rows() == layout.rows(), "pool: rows do not match layout");
  require(static_cast<int>(lengths.size()) == layout.batch, "pool: one length per sequence required");
  for (int len : lengths) require(len >= 1 && len <= layout.length, "pool: length out of range");
  RMat y(layout.batch, xv.cols());
  for (int b = 0; b < layout.batch; ++b) {
    const Index base = static_cast<Index>(b) * layout.length;
    if (mode == Pooling::mean) y.row(b) = xv.middleRows(base, lengths[b]).colwise().sum() / lengths[b];
    else y.row(b) = xv.row(base + lengths[b] - 1);
  }
  const int ix = x.id();
  return x.tape().push("pool", std::move(y), {x}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    RMat gx = RMat::Zero(layout.rows(), g.cols());
    for (int b = 0; b < layout.batch; ++b) {
      const Index base = static_cast<Index>(b) * layout.length;
      if (mode == Pooling::mean) gx.middleRows(base, lengths[b]).rowwise() += g.row(b) / lengths[b];
      else gx.row(base + lengths[b] - 1) = g.row(b);
    }
    t.add_grad(ix, gx);
  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const RMat& z = rv(logits);
  require(static_cast<Index>(labels.size()) == z.rows(), "cross_entropy: one label per row required");
  require(z.allFinite(), "cross_entropy: non-finite logits");
  RMat prob(z.rows(), z.cols());
  double loss = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    if (labels[i] < 0 || labels[i] >= z.cols())
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    const double m = z.row(i).maxCoeff();
    const auto e = (z.row(i).array() - m).exp();
    const double s = e.sum();
    prob.row(i) = e / s;
    loss += m + std::log(s) - z(i, labels[i]);
  }
  const double batch = static_cast<double>(z.rows());
  const int iz = logits.id();
  return logits.tape().push("cross_entropy", RMat(RMat::Constant(1, 1, loss / batch)), {logits}, [=](Tape& t, int self) {
    RMat gz = prob;
    for (Index i = 0; i < gz.rows(); ++i) gz(i, labels[i]) -= 1.0;
    t.add_grad(iz, RMat(gz * (t.grad_real(self)(0, 0) / batch)));
  });
}

namespace {

RMat shift_rows(const RMat& x, SeqLayout layout, int s) {
  RMat y = RMat::Zero(x.rows(), x.cols());
  if (s >= layout.length) return y;
  for (int b = 0; b < layout.batch; ++b) {
    const Index base = static_cast<Index>(b) * layout.length;
    if (s >= 0) y.middleRows(base + s, layout.length - s) = x.middleRows(base, layout.length - s);
    else y.middleRows(base, layout.length + s) = x.middleRows(base - s, layout.length + s);
  }
  return y;
}

}  // namespace

Var time_shift(Var x, SeqLayout layout, int s) {
  require(s >= 0, "time_shift: shift must be non-negative");
  const RMat& xv = rv(x);
  require(xv.rows() == layout.rows(), "time_shift: rows do not match layout");
  const int ix = x.id();
  return x.tape().push("time_shift", shift_rows(xv, layout, s), {x}, [=](Tape& t, int self) {
    t.add_grad(ix, shift_rows(t.grad_real(self), layout, -s));
  });
}

Var causal_conv(Var x, Var kernel, SeqLayout layout) {
  Tape& tp = same_tape(x, kernel);
  const RMat &xv = rv(x), &k = rv(kernel);
  require(xv.rows() == layout.rows(), "causal_conv: rows do not match layout");
  require(k.rows() == xv.cols() && k.cols() >= 1, "causal_conv: kernel must be q x width");
  const int w = static_cast<int>(k.cols());
  const int L = layout.length;
  RMat y = RMat::Zero(xv.rows(), xv.cols());
  for (int b = 0; b < layout.batch; ++b)
    for (int tt = 0; tt < L; ++tt)
      for (int i = 0; i < w && i <= tt; ++i)
        y.row(b * L + tt) += k.col(i).transpose().cwiseProduct(xv.row(b * L + tt - i));
  const int ix = x.id(), ik = kernel.id();
  return tp.push("causal_conv", std::move(y), {x, kernel}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    const RMat& xv = t.real(ix);
    const RMat& k = t.real(ik);
    RMat gx = RMat::Zero(xv.rows(), xv.cols());
    RMat gk = RMat::Zero(k.rows(), k.cols());
    for (int b = 0; b < layout.batch; ++b)
      for (int tt = 0; tt < L; ++tt)
        for (int i = 0; i < w && i <= tt; ++i) {
          gx.row(b * L + tt - i) += k.col(i).transpose().cwiseProduct(g.row(b * L + tt));
          gk.col(i) += g.row(b * L + tt).cwiseProduct(xv.row(b * L + tt - i)).transpose();
        }
    t.add_grad(ix, gx);
    t.add_grad(ik, gk);
  });
}

Var fft_conv(Var x, Var kernel, SeqLayout layout) {
  Tape& tp = same_tape(x, kernel);
  const RMat &xv = rv(x), &k = rv(kernel);
  const int L = layout.length, q = static_cast<int>(xv.cols());
  require(xv.rows() == layout.rows(), "fft_conv: rows do not match layout");
  require(k.rows() == q && k.cols() >= L, "fft_conv: kernel must be q x (>= length)");
  const FftConvolver fft(L);
  std::vector<double> buf(L), out(L);
  auto column = [&](const RMat& m, int b, int j) {
    for (int tt = 0; tt < L; ++tt) buf[tt] = m(b * L + tt, j);
    return fft.forward(buf);
  };
  RMat y(xv.rows(), q);
  for (int j = 0; j < q; ++j) {
    const auto kh = fft.forward(std::span<const double>(k.row(j).data(), L));
    for (int b = 0; b < layout.batch; ++b) {
      auto uh = column(xv, b, j);
      for (std::size_t f = 0; f < uh.size(); ++f) uh[f] *= kh[f];
      fft.inverse(uh, out);
      for (int tt = 0; tt < L; ++tt) y(b * L + tt, j) = out[tt];
    }
  }
  const int ix = x.id(), ik = kernel.id();
  return tp.push("fft_conv", std::move(y), {x, kernel}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    const RMat& xv = t.real(ix);
    const RMat& k = t.real(ik);
    const FftConvolver fft(L);
    std::vector<double> buf(L), out(L);
    auto column = [&](const RMat& m, int b, int j) {
      for (int tt = 0; tt < L; ++tt) buf[tt] = m(b * L + tt, j);
      return fft.forward(buf);
    };
    const bool want_x = t.needs_grad(ix), want_k = t.needs_grad(ik);
    RMat gx = RMat::Zero(xv.rows(), q);
    RMat gk = RMat::Zero(k.rows(), k.cols());
    for (int j = 0; j < q; ++j) {
      const auto kh = fft.forward(std::span<const double>(k.row(j).data(), L));
      FftConvolver::Spectrum acc(fft.spectrum_size(), cplx(0.0));
      for (int b = 0; b < layout.batch; ++b) {
        const auto gh = column(g, b, j);
        if (want_x) {
          FftConvolver::Spectrum s(gh.size());
          for (std::size_t f = 0; f < gh.size(); ++f) s[f] = std::conj(kh[f]) * gh[f];
          fft.inverse(s, out);
          for (int tt = 0; tt < L; ++tt) gx(b * L + tt, j) = out[tt];
        }
        if (want_k) {
          const auto uh = column(xv, b, j);
          for (std::size_t f = 0; f < gh.size(); ++f) acc[f] += std::conj(uh[f]) * gh[f];
        }
      }
      if (want_k) {
        fft.inverse(acc, out);
        for (int tt = 0; tt < L; ++tt) gk(j, tt) = out[tt];
      }
    }
    if (want_x) t.add_grad(ix, gx);
    if (want_k) t.add_grad(ik, gk);
  });
}

Var tile_cols(Var a, int reps) {
  const RMat& x = rv(a);
  const Index n = x.cols();
  const int ia = a.id();
  return a.tape().push("tile_cols", RMat(x.replicate(1, reps)), {a}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    RMat ga = RMat::Zero(g.rows(), n);
    for (int j = 0; j < reps; ++j) ga += g.middleCols(j * n, n);
    t.add_grad(ia, ga);
  });
}

Var row_outer(Var u, Var b) {
  Tape& tp = same_tape(u, b);
  const RMat &uv = rv(u), &bv = rv(b);
  require(uv.rows() == bv.rows(), "row_outer: row counts differ");
  const Index q = uv.cols(), n = bv.cols();
  RMat y(uv.rows(), q * n);
  for (Index j = 0; j < q; ++j) y.middleCols(j * n, n) = bv.array().colwise() * uv.col(j).array();
  const int iu = u.id(), ib = b.id();
  return tp.push("row_outer", std::move(y), {u, b}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    const RMat &uv = t.real(iu), &bv = t.real(ib);
    RMat gu(uv.rows(), q);
    RMat gb = RMat::Zero(bv.rows(), n);
    for (Index j = 0; j < q; ++j) {
      gu.col(j) = g.middleCols(j * n, n).cwiseProduct(bv).rowwise().sum();
      gb += RMat(g.middleCols(j * n, n).array().colwise() * uv.col(j).array());
    }
    t.add_grad(iu, gu);
    t.add_grad(ib, gb);
  });
}

Var row_contract(Var x, Var c) {
  Tape& tp = same_tape(x, c);
  const RMat &xv = rv(x), &cv = rv(c);
  const Index n = cv.cols();
  require(xv.rows() == cv.rows() && xv.cols() % n == 0, "row_contract: shape mismatch");
  const Index q = xv.cols() / n;
  RMat y(xv.rows(), q);
  for (Index j = 0; j < q; ++j) y.col(j) = xv.middleCols(j * n, n).cwiseProduct(cv).rowwise().sum();
  const int ix = x.id(), ic = c.id();
  return tp.push("row_contract", std::move(y), {x, c}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    const RMat &xv = t.real(ix), &cv = t.real(ic);
    RMat gx(xv.rows(), xv.cols());
    RMat gc = RMat::Zero(cv.rows(), n);
    for (Index j = 0; j < q; ++j) {
      gx.middleCols(j * n, n) = cv.array().colwise() * g.col(j).array();
      gc += RMat(xv.middleCols(j * n, n).array().colwise() * g.col(j).array());
    }
    t.add_grad(ix, gx);
    t.add_grad(ic, gc);
  });
}

template <class S>
ScanGrads<S> scan_backward(const SMat<S>& abar_seq, const SMat<S>& x_seq, const SMat<S>& upstream, bool reversed_scan) {
  const Index T = x_seq.rows(), P = x_seq.cols();
  if (upstream.rows() != T || upstream.cols() != P || abar_seq.cols() != P ||
      (abar_seq.rows() != T && abar_seq.rows() != 1))
    throw std::invalid_argument("scan_backward: shape mismatch");
  const bool shared = abar_seq.rows() == 1 && T != 1;
  auto a_at = [&](Index k) { return abar_seq.row(shared ? 0 : k); };
  SMat<S> mu(T, P);
  if (reversed_scan) {
    // mu(k) = upstream(k) + conj(a(k+1)) mu(k+1) is a forward recurrence in reversed time.
    SMat<S> arev(T, P), grev(T, P);
    arev.row(0).setZero();
    for (Index r = 0; r < T; ++r) {
      if (r > 0) arev.row(r) = a_at(T - r).conjugate();
      grev.row(r) = upstream.row(T - 1 - r);
    }
    const SMat<S> murev = scan<S>(arev, grev);
    for (Index r = 0; r < T; ++r) mu.row(T - 1 - r) = murev.row(r);
  } else {
    mu.row(T - 1) = upstream.row(T - 1);
    for (Index k = T - 2; k >= 0; --k) mu.row(k) = upstream.row(k) + a_at(k + 1).conjugate().cwiseProduct(mu.row(k + 1));
  }
  ScanGrads<S> out;
  out.drive = mu;
  out.abar = SMat<S>::Zero(abar_seq.rows(), P);
  for (Index k = 1; k < T; ++k) {
    const auto term = mu.row(k).cwiseProduct(x_seq.row(k - 1).conjugate());
    if (shared) out.abar.row(0) += term;
    else out.abar.row(k) = term;
  }
  return out;
}

template ScanGrads<double> scan_backward<double>(const SMat<double>&, const SMat<double>&, const SMat<double>&, bool);
template ScanGrads<cplx> scan_backward<cplx>(const SMat<cplx>&, const SMat<cplx>&, const SMat<cplx>&, bool);

namespace {

template <class S>
const SMat<S>& value_of(const Tape& t, int id) {
  if constexpr (std::is_same_v<S, double>) return t.real(id);
  else return t.cplx(id);
}

template <class S>
const SMat<S>& grad_of(Tape& t, int id) {
  if constexpr (std::is_same_v<S, double>) return t.grad_real(id);
  else return t.grad_cplx(id);
}

template <class S>
Var scan_op(std::string_view name, Var a, Var d, SeqLayout layout) {
  Tape& tp = same_tape(a, d);
  const SMat<S> av = [&] {
    if constexpr (std::is_same_v<S, double>) return rv(a);
    else return cv(a);
  }();
  const SMat<S> dv = [&] {
    if constexpr (std::is_same_v<S, double>) return rv(d);
    else return cv(d);
  }();
  const int L = layout.length;
  require(dv.rows() == layout.rows(), "scan: drive rows do not match layout");
  require(av.cols() == dv.cols() && (av.rows() == 1 || av.rows() == dv.rows()), "scan: transition shape mismatch");
  const bool shared = av.rows() == 1;
  SMat<S> x(dv.rows(), dv.cols());
  for (int b = 0; b < layout.batch; ++b) {
    const SMat<S> ab = shared ? av : SMat<S>(av.middleRows(b * L, L));
    x.middleRows(b * L, L) = scan<S>(ab, SMat<S>(dv.middleRows(b * L, L)));
  }
  const int ia = a.id(), id = d.id();
  return tp.push(name, std::move(x), {a, d}, [=](Tape& t, int self) {
    const SMat<S>& x = value_of<S>(t, self);
    const SMat<S>& g = grad_of<S>(t, self);
    const SMat<S> av = [&] {
      if constexpr (std::is_same_v<S, double>) return t.real(ia);
      else return cval(t, ia);
    }();
    SMat<S> ga = SMat<S>::Zero(av.rows(), av.cols());
    SMat<S> gd(x.rows(), x.cols());
    for (int b = 0; b < layout.batch; ++b) {
      const SMat<S> ab = shared ? av : SMat<S>(av.middleRows(b * L, L));
      const auto gr = scan_backward<S>(ab, SMat<S>(x.middleRows(b * L, L)), SMat<S>(g.middleRows(b * L, L)));
      gd.middleRows(b * L, L) = gr.drive;
      if (shared) ga += gr.abar;
      else ga.middleRows(b * L, L) = gr.abar;
    }
    t.add_grad(ia, ga);
    t.add_grad(id, gd);
  });
}

}  // namespace

Var scan_real(Var a, Var d, SeqLayout layout) { return scan_op<double>("scan_real", a, d, layout); }
Var scan_complex(Var a, Var d, SeqLayout layout) { return scan_op<cplx>("scan_complex", a, d, layout); }

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no operands");
  const Index rows = rv(parts[0]).rows();
  Index cols = 0;
  std::vector<int> ids, widths;
  for (Var p : parts) {
    require(rv(p).rows() == rows, "concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(static_cast<int>(p.real().cols()));
    cols += p.real().cols();
  }
  RMat y(rows, cols);
  Index off = 0;
  for (Var p : parts) {
    y.middleCols(off, p.real().cols()) = p.real();
    off += p.real().cols();
  }
  return parts[0].tape().push("concat_cols", std::move(y), parts, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.add_grad(ids[i], RMat(g.middleCols(off, widths[i])));
      off += widths[i];
    }
  });
}

Var make_complex(Var re, Var im) {
  Tape& tp = same_tape(re, im);
  const RMat &a = rv(re), &b = rv(im);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "make_complex: shape mismatch");
  CMat z(a.rows(), a.cols());
  z.real() = a;
  z.imag() = b;
  const int ir = re.id(), ii = im.id();
  return tp.push("make_complex", std::move(z), {re, im}, [=](Tape& t, int self) {
    const CMat& g = t.grad_cplx(self);
    t.add_grad(ir, RMat(g.real()));
    t.add_grad(ii, RMat(g.imag()));
  });
}

Var real_part(Var z) {
  require(z.is_complex(), "real_part: operand is real");
  const int iz = z.id();
  return z.tape().push("real_part", RMat(z.cplx().real()), {z},
                       [=](Tape& t, int self) { t.add_grad(iz, CMat(t.grad_real(self).cast<cplx>())); });
}

Var cadd(Var a, Var b) {
  Tape& tp = same_tape(a, b);
  const CMat x = cv(a), y = cv(b);
  auto [r, c] = broadcast_shape(x.rows(), x.cols(), y.rows(), y.cols());
  const Index ra = x.rows(), ca = x.cols(), rb = y.rows(), cb = y.cols();
  const int ia = a.id(), ib = b.id();
  return tp.push("cadd", CMat(expand(x, r, c) + expand(y, r, c)), {a, b}, [=](Tape& t, int self) {
    const CMat& g = t.grad_cplx(self);
    t.add_grad(ia, reduce_to(g, ra, ca));
    t.add_grad(ib, reduce_to(g, rb, cb));
  });
}

Var cmul(Var a, Var b) {
  Tape& tp = same_tape(a, b);
  const CMat x = cv(a), y = cv(b);
  auto [r, c] = broadcast_shape(x.rows(), x.cols(), y.rows(), y.cols());
  const Index ra = x.rows(), ca = x.cols(), rb = y.rows(), cb = y.cols();
  const int ia = a.id(), ib = b.id();
  return tp.push("cmul", CMat(expand(x, r, c).cwiseProduct(expand(y, r, c))), {a, b}, [=](Tape& t, int self) {
    const CMat& g = t.grad_cplx(self);
    if (t.needs_grad(ia)) t.add_grad(ia, reduce_to(CMat(g.cwiseProduct(expand(cval(t, ib), r, c).conjugate())), ra, ca));
    if (t.needs_grad(ib)) t.add_grad(ib, reduce_to(CMat(g.cwiseProduct(expand(cval(t, ia), r, c).conjugate())), rb, cb));
  });
}

Var cmul_real(Var z, Var r) {
  require(!r.is_complex(), "cmul_real: second operand must be real");
  return cmul(z, r);
}

Var cscale(Var z, cplx s) {
  const int iz = z.id();
  return z.tape().push("cscale", CMat(cv(z) * s), {z},
                       [=](Tape& t, int self) { t.add_grad(iz, CMat(t.grad_cplx(self) * std::conj(s))); });
}

namespace {

// Holomorphic elementwise op; df(z, y) returns dy/dz.
template <class F, class DF>
Var cunary(std::string_view name, Var z, F f, DF df) {
  const CMat x = cv(z);
  CMat y = x.unaryExpr(f);
  const int iz = z.id();
  return z.tape().push(name, std::move(y), {z}, [=](Tape& t, int self) {
    const CMat x = cval(t, iz);
    const CMat& y = t.cplx(self);
    const CMat& g = t.grad_cplx(self);
    CMat gz(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) gz.data()[i] = g.data()[i] * std::conj(df(x.data()[i], y.data()[i]));
    t.add_grad(iz, gz);
  });
}

}  // namespace

Var cexp(Var z) {
  return cunary("cexp", z, [](cplx x) { return std::exp(x); }, [](cplx, cplx y) { return y; });
}

Var crecip(Var z) {
  return cunary("crecip", z, [](cplx x) { return 1.0 / x; }, [](cplx, cplx y) { return -y * y; });
}

Var cphi1(Var z) {
  return cunary(
      "cphi1", z, [](cplx x) { return expm1_over(x); }, [](cplx x, cplx y) { return phi1_derivative(x, y); });
}

Var mirror_cols(Var z) {
  const CMat x = cv(z);
  const Index m = x.cols();
  CMat y(x.rows(), 2 * m);
  y.leftCols(m) = x;
  y.rightCols(m) = x.conjugate();
  const int iz = z.id();
  return z.tape().push("mirror_cols", std::move(y), {z}, [=](Tape& t, int self) {
    const CMat& g = t.grad_cplx(self);
    t.add_grad(iz, CMat(g.leftCols(m) + g.rightCols(m).conjugate()));
  });
}

Var row_dot(Var a, Var b, bool conj_a) {
  Tape& tp = same_tape(a, b);
  const CMat x = cv(a), y = cv(b);
  require(x.rows() == y.rows() && x.cols() == y.cols(), "row_dot: shape mismatch");
  CMat out = conj_a ? CMat(x.conjugate().cwiseProduct(y).rowwise().sum()) : CMat(x.cwiseProduct(y).rowwise().sum());
  const int ia = a.id(), ib = b.id();
  return tp.push("row_dot", std::move(out), {a, b}, [=](Tape& t, int self) {
    const CMat& g = t.grad_cplx(self);
    const CMat x = cval(t, ia), y = cval(t, ib);
    const CMat gb = conj_a ? CMat(x.array().colwise() * g.col(0).array())
                           : CMat(x.conjugate().array().colwise() * g.col(0).array());
    const CMat ga = conj_a ? CMat(y.array().colwise() * g.col(0).conjugate().array())
                           : CMat(y.conjugate().array().colwise() * g.col(0).array());
    t.add_grad(ia, ga);
    t.add_grad(ib, gb);
  });
}

// Real x complex products are split into real GEMMs; complex GEMM kernels are
// several times slower and these two ops dominate the MIMO cores.
namespace {
CMat join(const RMat& re, const RMat& im) {
  CMat z(re.rows(), re.cols());
  z.real() = re;
  z.imag() = im;
  return z;
}
}  // namespace

Var cmatmul_rc(Var u, Var w) {
  Tape& tp = same_tape(u, w);
  const RMat& uv = rv(u);
  const CMat wv = cv(w);
  require(uv.cols() == wv.cols(), "cmatmul_rc: width mismatch");
  const int iu = u.id(), iw = w.id();
  const RMat wr = wv.real(), wi = wv.imag();
  return tp.push("cmatmul_rc", join(uv * wr.transpose(), uv * wi.transpose()), {u, w}, [=](Tape& t, int self) {
    const CMat& g = t.grad_cplx(self);
    const RMat gr = g.real(), gi = g.imag();
    if (t.needs_grad(iu)) t.add_grad(iu, RMat(gr * wr + gi * wi));
    if (t.needs_grad(iw)) {
      const RMat& uu = t.real(iu);
      t.add_grad(iw, join(gr.transpose() * uu, gi.transpose() * uu));
    }
  });
}

Var re_matmul_bt(Var x, Var c) {
  Tape& tp = same_tape(x, c);
  const CMat xv = cv(x), cm = cv(c);
  require(xv.cols() == cm.cols(), "re_matmul_bt: width mismatch");
  const int ix = x.id(), ic = c.id();
  const RMat xr = xv.real(), xi = xv.imag(), cr = cm.real(), ci = cm.imag();
  return tp.push("re_matmul_bt", RMat(xr * cr.transpose() - xi * ci.transpose()), {x, c}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    if (t.needs_grad(ix)) t.add_grad(ix, join(g * cr, -(g * ci)));
    if (t.needs_grad(ic)) t.add_grad(ic, join(g.transpose() * xr, -(g.transpose() * xi)));
  });
}

Var vandermonde(Var w, Var a, int length) {
  Tape& tp = same_tape(w, a);
  const CMat wv = cv(w), av = cv(a);
  require(wv.rows() == av.rows() && wv.cols() == av.cols(), "vandermonde: shape mismatch");
  require(length >= 1, "vandermonde: length must be positive");
  const Index q = wv.rows(), m = wv.cols();
  RMat k = RMat::Zero(q, length);
  for (Index j = 0; j < q; ++j)
    for (Index i = 0; i < m; ++i) {
      cplx pw = wv(j, i);
      for (int tt = 0; tt < length; ++tt) {
        k(j, tt) += pw.real();
        pw *= av(j, i);
      }
    }
  const int iw = w.id(), ia = a.id();
  return tp.push("vandermonde", std::move(k), {w, a}, [=](Tape& t, int self) {
    const RMat& g = t.grad_real(self);
    const CMat wv = cval(t, iw), av = cval(t, ia);
    CMat gw = CMat::Zero(q, m), ga = CMat::Zero(q, m);
    for (Index j = 0; j < q; ++j)
      for (Index i = 0; i < m; ++i) {
        cplx pw(1.0), sw(0.0), sa(0.0);
        for (int tt = 0; tt < length; ++tt) {
          sw += g(j, tt) * std::conj(pw);
          if (tt + 1 < length) sa += g(j, tt + 1) * std::conj(static_cast<double>(tt + 1) * pw);
          pw *= av(j, i);
        }
        gw(j, i) = sw;
        ga(j, i) = sa * std::conj(wv(j, i));
      }
    t.add_grad(iw, gw);
    t.add_grad(ia, ga);
  });
}

}  // namespace ssm::ad
