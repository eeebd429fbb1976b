#pragma once

#include <vector>

#include "ssm/learn/tape.hpp"

namespace ssm::ad {

/// Batched sequences are stacked time-major: rows [b*length, (b+1)*length)
/// belong to sequence b. Shorter sequences are right-padded; padding never
/// influences earlier steps because every op here is causal.
struct SeqLayout {
  int batch = 1;
  int length = 1;
  int rows() const { return batch * length; }
};

enum class Pooling { mean, last };

// Elementwise binary ops broadcast any size-1 dimension.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
/// x W^T (+ bias row).
Var linear(Var x, Var w);
Var linear(Var x, Var w, Var bias);
Var transpose(Var a);

Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var silu(Var a);
Var square(Var a);
/// sqrt(1 - a^2), for a in [0, 1).
Var sqrt1m_sq(Var a);
/// (e^a - 1) / a, continuous at 0.
Var phi1(Var a);
Var softmax_rows(Var a);
/// x / rms(x) * gain per row, gain 1 x q.
Var rms_norm(Var x, Var gain, double eps = 1e-6);
Var sum(Var a);
Var mean(Var a);

/// Rows of the table selected by token id. Throws on ids outside the table.
Var embedding(Var table, const std::vector<int>& tokens);
/// Per-sequence pooling over the first lengths[b] steps -> batch x q.
Var pool(Var x, SeqLayout layout, const std::vector<int>& lengths, Pooling mode);
/// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(Var logits, const std::vector<int>& labels);

/// y(k) = x(k - s) within each sequence, zero-filled.
Var time_shift(Var x, SeqLayout layout, int s);
/// Per-channel causal FIR: y(k, j) = sum_i kernel(j, i) x(k - i, j).
Var causal_conv(Var x, Var kernel, SeqLayout layout);
/// Per-channel causal convolution with a q x L kernel (L >= length), via FFT.
Var fft_conv(Var x, Var kernel, SeqLayout layout);

/// N x n -> N x (reps n), block j equal to the input.
Var tile_cols(Var a, int reps);
/// (N x q, N x n) -> N x (q n), entry j n + i = u_j b_i.
Var row_outer(Var u, Var b);
/// (N x q n, N x n) -> N x q, entry j = sum_i c_i x_{j n + i}.
Var row_contract(Var x, Var c);

/// States of x(k) = a(k) x(k-1) + d(k) per sequence; a is N x P or 1 x P.
Var scan_real(Var a, Var d, SeqLayout layout);
Var scan_complex(Var a, Var d, SeqLayout layout);

Var concat_cols(const std::vector<Var>& parts);

// Complex ops.
Var make_complex(Var re, Var im);
Var real_part(Var z);
Var cadd(Var a, Var b);
Var cmul(Var a, Var b);
Var cmul_real(Var z, Var r);
Var cscale(Var z, cplx s);
Var cexp(Var z);
Var crecip(Var z);
Var cphi1(Var z);
/// N x m -> N x 2m: [z, conj(z)].
Var mirror_cols(Var z);
/// Row-wise sum_i conj(a_i) b_i (conj_a) or sum_i a_i b_i -> N x 1.
Var row_dot(Var a, Var b, bool conj_a);
/// Real N x q times complex W^T (W is p x q) -> complex N x p.
Var cmatmul_rc(Var u, Var w);
/// Re(x C^T) for complex x (N x P) and C (q x P) -> real N x q.
Var re_matmul_bt(Var x, Var c);
/// K(j, t) = Re sum_i w(j, i) a(j, i)^t, t < length -> real q x length.
Var vandermonde(Var w, Var a, int length);

/// Gradients of the linear recurrence given its states and upstream dL/dx.
/// reversed_scan selects the time-reversed scan() formulation; otherwise a plain loop.
template <class S>
struct ScanGrads {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> abar;   // shaped like abar_seq
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> drive;  // T x P
};

template <class S>
ScanGrads<S> scan_backward(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& abar_seq,
                           const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& x_seq,
                           const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& upstream,
                           bool reversed_scan = true);

}  // namespace ssm::ad
