#pragma once

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace srirgen::dsp {

using Complex = std::complex<double>;

// Real FFT of a fixed size backed by FFTW. Plans use FFTW_ESTIMATE so results
// do not depend on timing-based planner choices.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw std::invalid_argument("fft size must be positive");
    time_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    freq_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    const int ni = static_cast<int>(n);
    fwd_ = fftw_plan_dft_r2c_1d(ni, time_, freq_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(ni, freq_, time_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(time_);
    fftw_free(freq_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  // Input shorter than the transform size is zero padded.
  std::vector<Complex> forward(std::span<const double> x) {
    if (x.size() > n_) throw std::invalid_argument("fft input longer than transform");
    std::fill(time_, time_ + n_, 0.0);
    std::copy(x.begin(), x.end(), time_);
    fftw_execute(fwd_);
    std::vector<Complex> out(bins());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = {freq_[k][0], freq_[k][1]};
    return out;
  }

  // Normalized inverse (forward followed by inverse is the identity).
  std::vector<double> inverse(std::span<const Complex> spec) {
    if (spec.size() != bins()) throw std::invalid_argument("spectrum size mismatch");
    for (std::size_t k = 0; k < spec.size(); ++k) {
      freq_[k][0] = spec[k].real();
      freq_[k][1] = spec[k].imag();
    }
    fftw_execute(inv_);
    std::vector<double> out(time_, time_ + n_);
    const double s = 1.0 / static_cast<double>(n_);
    for (auto& v : out) v *= s;
    return out;
  }

 private:
  std::size_t n_;
  double* time_ = nullptr;
  fftw_complex* freq_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Linear convolution of a and b, truncated to `out_len` samples.
inline std::vector<double> fft_convolve(std::span<const double> a,
                                        std::span<const double> b,
                                        std::size_t out_len) {
  std::vector<double> out(out_len, 0.0);
  if (a.empty() || b.empty() || out_len == 0) return out;
  const std::size_t full = a.size() + b.size() - 1;
  RealFft fft(next_pow2(full));
  auto fa = fft.forward(a);
  auto fb = fft.forward(b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  auto y = fft.inverse(fa);
  std::copy_n(y.begin(), std::min(out_len, full), out.begin());
  return out;
}

}  // namespace srirgen::dsp
