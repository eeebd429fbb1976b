#include "ssm/fft.hpp"

#include <cstdlib>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

#include <fftw3.h>

#include "ssm/parallel.hpp"

namespace ssm {

int default_workers() {
  if (const char* env = std::getenv("SSM_WORKERS")) {
    const int w = std::atoi(env);
    if (w > 0) return w;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace {

struct PlanPair {
  fftw_plan r2c;
  fftw_plan c2r;
};

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

const PlanPair& plans_for(int n) {
  static std::map<int, PlanPair> cache;
  std::lock_guard lock(plan_mutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> re(n);
  std::vector<fftw_complex> sp(n / 2 + 1);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair pp{fftw_plan_dft_r2c_1d(n, re.data(), sp.data(), flags),
              fftw_plan_dft_c2r_1d(n, sp.data(), re.data(), flags | FFTW_DESTROY_INPUT)};
  if (!pp.r2c || !pp.c2r) throw std::runtime_error("FFTW plan creation failed for size " + std::to_string(n));
  return cache.emplace(n, pp).first->second;
}

}  // namespace

FftConvolver::FftConvolver(int length) : length_(length), size_(next_pow2(2 * std::max(1, length))) {
  if (length < 1) throw std::invalid_argument("FftConvolver: length must be positive");
  const auto& pp = plans_for(size_);
  plan_r2c_ = pp.r2c;
  plan_c2r_ = pp.c2r;
}

FftConvolver::Spectrum FftConvolver::forward(std::span<const double> signal) const {
  std::vector<double> buf(size_, 0.0);
  const std::size_t n = std::min<std::size_t>(signal.size(), static_cast<std::size_t>(length_));
  std::copy_n(signal.begin(), n, buf.begin());
  Spectrum out(spectrum_size());
  fftw_execute_dft_r2c(static_cast<fftw_plan>(const_cast<void*>(plan_r2c_)), buf.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

void FftConvolver::inverse(const Spectrum& spec, std::span<double> out) const {
  Spectrum tmp = spec;  // c2r destroys its input
  std::vector<double> buf(size_);
  fftw_execute_dft_c2r(static_cast<fftw_plan>(const_cast<void*>(plan_c2r_)),
                       reinterpret_cast<fftw_complex*>(tmp.data()), buf.data());
  const double scale = 1.0 / size_;
  const std::size_t n = std::min<std::size_t>(out.size(), static_cast<std::size_t>(length_));
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i] * scale;
}

void FftConvolver::convolve(std::span<const double> kernel, std::span<const double> input, std::span<double> out) const {
  auto k = forward(kernel);
  const auto u = forward(input);
  for (std::size_t i = 0; i < k.size(); ++i) k[i] *= u[i];
  inverse(k, out);
}

void FftConvolver::correlate(std::span<const double> kernel, std::span<const double> signal,
                             std::span<double> out) const {
  auto k = forward(kernel);
  const auto g = forward(signal);
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = std::conj(k[i]) * g[i];
  inverse(k, out);
}

}  // namespace ssm
