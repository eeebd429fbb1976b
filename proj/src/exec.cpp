#include "ssm/exec.hpp"

#include <cmath>

#include "ssm/fft.hpp"
#include "ssm/parallel.hpp"

namespace ssm {

namespace {

void check_input(const DiscreteSystem& sys, const Sequence& u) {
  if (u.channels() != sys.channels())
    throw std::invalid_argument("input has " + std::to_string(u.channels()) + " channels, system expects " +
                                std::to_string(sys.channels()));
  const auto v = validate_system(sys, {.memory = false});
  if (!v.empty()) throw std::invalid_argument("invalid discrete system: " + v.front().invariant);
}

template <class Derived>
void check_finite_state(const Eigen::MatrixBase<Derived>& x, int k) {
  if (!x.allFinite()) throw DivergenceError("non-finite state at step " + std::to_string(k), k);
}

}  // namespace

StepResult step(const DiscreteSystem& sys, const CVec& x, const RVec& u) {
  if (x.size() != sys.state_size() || u.size() != sys.channels()) throw std::invalid_argument("step: shape mismatch");
  StepResult r;
  r.x = sys.abar.cwiseProduct(x) + sys.bbar * u.cast<cplx>();
  r.y = (sys.cbar * r.x).real() + sys.dbar.cwiseProduct(u);
  return r;
}

Sequence run_recurrent(const DiscreteSystem& sys, const Sequence& u, const std::optional<CVec>& x0) {
  check_input(sys, u);
  const int T = u.length();
  const int p = sys.state_size();
  CVec x = x0 ? *x0 : CVec::Zero(p);
  if (x.size() != p) throw std::invalid_argument("run_recurrent: initial state has wrong size");
  RMat y(T, u.channels());
  for (int k = 0; k < T; ++k) {
    const RVec uk = u.data().row(k).transpose();
    x = sys.abar.cwiseProduct(x) + sys.bbar * uk.cast<cplx>();
    check_finite_state(x, k);
    y.row(k) = ((sys.cbar * x).real() + sys.dbar.cwiseProduct(uk)).transpose();
  }
  return Sequence(std::move(y));
}

Sequence run_recurrent(const DplrDiscrete& sys, const Sequence& u) {
  if (u.channels() != sys.channels()) throw std::invalid_argument("run_recurrent: channel mismatch");
  const int T = u.length();
  CVec x = CVec::Zero(sys.state_size());
  RMat y(T, u.channels());
  for (int k = 0; k < T; ++k) {
    const RVec uk = u.data().row(k).transpose();
    x = sys.apply_transition(x) + sys.bbar() * uk.cast<cplx>();
    check_finite_state(x, k);
    y.row(k) = ((sys.cbar() * x).real() + sys.dbar().cwiseProduct(uk)).transpose();
  }
  return Sequence(std::move(y));
}

template <class S>
SMat<S> scan_sequential(const SMat<S>& abar_seq, const SMat<S>& drive_seq) {
  const auto T = drive_seq.rows();
  const bool lti = abar_seq.rows() == 1;
  SMat<S> x(T, drive_seq.cols());
  x.row(0) = drive_seq.row(0);
  for (Eigen::Index k = 1; k < T; ++k)
    x.row(k) = (lti ? abar_seq.row(0) : abar_seq.row(k)).cwiseProduct(x.row(k - 1)) + drive_seq.row(k);
  return x;
}

template <class S>
SMat<S> scan(const SMat<S>& abar_seq, const SMat<S>& drive_seq, const ScanOptions& opts) {
  const int T = static_cast<int>(drive_seq.rows());
  const int p = static_cast<int>(drive_seq.cols());
  if (T < 1) throw std::invalid_argument("scan: empty sequence");
  if (abar_seq.cols() != p || (abar_seq.rows() != T && abar_seq.rows() != 1))
    throw std::invalid_argument("scan: abar_seq must be T x p or 1 x p");
  const bool lti = abar_seq.rows() == 1;
  auto a_row = [&](int t) { return abar_seq.row(lti ? 0 : t); };

  int chunks = std::max(1, std::min(opts.workers, T / std::max(1, opts.min_chunk)));
  chunks = std::min(chunks, std::max(1, static_cast<int>(std::sqrt(T / 4.0))));
  auto begin_of = [&](int c) { return static_cast<int>(static_cast<long>(T) * c / chunks); };

  SMat<S> x = drive_seq;
  SMat<S> cum_a(chunks > 1 ? T : 0, p);
  long local_combines = 0;

  // Phase 1: chunk-local inclusive scans.
  std::vector<long> phase_counts(chunks, 0);
  parallel_chunks(chunks, chunks, [&](int, int cb, int ce) {
    for (int c = cb; c < ce; ++c) {
      const int b = begin_of(c), e = begin_of(c + 1);
      if (chunks > 1) cum_a.row(b) = a_row(b);
      for (int t = b + 1; t < e; ++t) {
        x.row(t) = a_row(t).cwiseProduct(x.row(t - 1)) + x.row(t);
        if (chunks > 1) cum_a.row(t) = a_row(t).cwiseProduct(cum_a.row(t - 1));
        ++phase_counts[c];
      }
    }
  });
  for (long n : phase_counts) local_combines += n;

  if (chunks > 1) {
    // Phase 2: exclusive Blelloch scan over chunk totals.
    int leaves = 1;
    while (leaves < chunks) leaves <<= 1;
    std::vector<ScanElement<S>> tree(leaves, ScanElement<S>::identity(p));
    for (int c = 0; c < chunks; ++c) {
      const int last = begin_of(c + 1) - 1;
      tree[c] = {cum_a.row(last).transpose(), x.row(last).transpose()};
    }
    for (int d = 1; d < leaves; d <<= 1)
      for (int i = 2 * d - 1; i < leaves; i += 2 * d) {
        tree[i] = combine(tree[i - d], tree[i]);
        ++local_combines;
      }
    tree[leaves - 1] = ScanElement<S>::identity(p);
    for (int d = leaves >> 1; d >= 1; d >>= 1)
      for (int i = 2 * d - 1; i < leaves; i += 2 * d) {
        ScanElement<S> left = std::move(tree[i - d]);
        tree[i - d] = tree[i];
        tree[i] = combine(tree[i], left);
        ++local_combines;
      }

    // Phase 3: apply each chunk's incoming carry.
    std::fill(phase_counts.begin(), phase_counts.end(), 0);
    parallel_chunks(chunks, chunks, [&](int, int cb, int ce) {
      for (int c = std::max(cb, 1); c < ce; ++c) {
        const auto carry = tree[c].b.transpose();
        for (int t = begin_of(c); t < begin_of(c + 1); ++t) {
          x.row(t) += cum_a.row(t).cwiseProduct(carry);
          ++phase_counts[c];
        }
      }
    });
    for (long n : phase_counts) local_combines += n;
    if (opts.stats) opts.stats->tree_leaves = leaves;
  }
  if (opts.stats) {
    opts.stats->combines += local_combines;
    opts.stats->chunks = chunks;
  }
  return x;
}

template SMat<double> scan<double>(const SMat<double>&, const SMat<double>&, const ScanOptions&);
template SMat<cplx> scan<cplx>(const SMat<cplx>&, const SMat<cplx>&, const ScanOptions&);
template SMat<double> scan_sequential<double>(const SMat<double>&, const SMat<double>&);
template SMat<cplx> scan_sequential<cplx>(const SMat<cplx>&, const SMat<cplx>&);

Sequence run_scan(const DiscreteSystem& sys, const Sequence& u, const ScanOptions& opts) {
  check_input(sys, u);
  const CMat drive = u.data().cast<cplx>() * sys.bbar.transpose();
  const CMat abar = sys.abar.transpose();
  const CMat x = scan<cplx>(abar, drive, opts);
  check_finite_state(x, u.length() - 1);
  RMat y = (x * sys.cbar.transpose()).real();
  y += u.data() * sys.dbar.asDiagonal();
  return Sequence(std::move(y));
}

Kernel materialize_kernel(const DiscreteSystem& sys, int length) {
  if (length < 1) throw std::invalid_argument("materialize_kernel: length must be positive");
  const int p = sys.state_size();
  const auto q_out = sys.cbar.rows(), q_in = sys.bbar.cols();
  // powers(j, n) = abar_n^j, then every (i, k) tap sequence is one matvec
  Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic> powers(length, p);
  // Columns are cut once they fall below 1e-200: the tail is invisible in fp64
  // and continuing would crawl through subnormals.
  powers.setZero();
  for (int n = 0; n < p; ++n) {
    cplx z = 1.0;
    for (int j = 0; j < length && std::abs(z) > 1e-200; ++j) {
      powers(j, n) = z;
      z *= sys.abar(n);
    }
  }
  Kernel k;
  k.taps.assign(length, RMat(q_out, q_in));
  for (Eigen::Index i = 0; i < q_out; ++i)
    for (Eigen::Index c = 0; c < q_in; ++c) {
      const CVec w = sys.cbar.row(i).transpose().cwiseProduct(sys.bbar.col(c));
      const RVec col = (powers * w).real();
      for (int j = 0; j < length; ++j) k.taps[j](i, c) = col(j);
    }
  return k;
}

Kernel materialize_kernel(const DplrDiscrete& sys, int length) {
  if (length < 1) throw std::invalid_argument("materialize_kernel: length must be positive");
  Kernel k;
  k.taps.reserve(length);
  CMat v = sys.bbar();
  for (int j = 0; j < length; ++j) {
    k.taps.push_back((sys.cbar() * v).real());
    for (Eigen::Index c = 0; c < v.cols(); ++c) v.col(c) = sys.apply_transition(v.col(c));
  }
  return k;
}

Sequence run_convolution(const Kernel& kernel, const RVec& dbar, const Sequence& u, int workers) {
  const int T = u.length();
  const int q = u.channels();
  if (kernel.channels() != q || dbar.size() != q) throw std::invalid_argument("run_convolution: channel mismatch");
  if (kernel.length() < T) throw std::invalid_argument("run_convolution: kernel shorter than input");
  const FftConvolver fft(T);
  std::vector<FftConvolver::Spectrum> u_spec(q);
  std::vector<double> col(T);
  for (int j = 0; j < q; ++j) {
    for (int t = 0; t < T; ++t) col[t] = u(t, j);
    u_spec[j] = fft.forward(col);
  }
  RMat y(T, q);
  parallel_chunks(workers, q, [&](int, int ib, int ie) {
    std::vector<double> taps(T), out(T);
    for (int i = ib; i < ie; ++i) {
      FftConvolver::Spectrum acc(fft.spectrum_size(), 0.0);
      for (int j = 0; j < q; ++j) {
        for (int t = 0; t < T; ++t) taps[t] = kernel.taps[t](i, j);
        const auto ks = fft.forward(taps);
        for (std::size_t f = 0; f < acc.size(); ++f) acc[f] += ks[f] * u_spec[j][f];
      }
      fft.inverse(acc, out);
      for (int t = 0; t < T; ++t) y(t, i) = out[t] + dbar(i) * u(t, i);
    }
  });
  return Sequence(std::move(y));
}

Sequence run_convolution(const DiscreteSystem& sys, const Sequence& u, int workers) {
  check_input(sys, u);
  return run_convolution(materialize_kernel(sys, u.length()), sys.dbar, u, workers);
}

}  // namespace ssm
