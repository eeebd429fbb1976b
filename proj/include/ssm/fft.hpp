#pragma once

#include <complex>
#include <span>
#include <vector>

namespace ssm {

/// Zero-padded real FFT of length next_pow2(2T) for aliasing-free causal
/// convolution and correlation of length-T signals. Backed by FFTW; plans are
/// cached per size and shared across threads.
class FftConvolver {
 public:
  explicit FftConvolver(int length);

  int length() const { return length_; }
  int fft_size() const { return size_; }
  int spectrum_size() const { return size_ / 2 + 1; }

  using Spectrum = std::vector<std::complex<double>>;

  Spectrum forward(std::span<const double> signal) const;
  /// Inverse transform, keeping the first `length()` samples (scaled).
  void inverse(const Spectrum& spec, std::span<double> out) const;

  /// out[t] = sum_{s<=t} kernel[t-s] * input[s]
  void convolve(std::span<const double> kernel, std::span<const double> input, std::span<double> out) const;
  /// out[s] = sum_{t>=s} kernel[t-s] * signal[t]  (adjoint of convolve w.r.t. input)
  void correlate(std::span<const double> kernel, std::span<const double> signal, std::span<double> out) const;

 private:
  int length_;
  int size_;
  const void* plan_r2c_;
  const void* plan_c2r_;
};

int next_pow2(int n);

}  // namespace ssm
