#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "srirgen/dsp/fft.hpp"

namespace srirgen::dsp {

// Zero-phase octave crossover whose band responses sum to exactly one at every
// FFT bin. Crossovers sit at the geometric mean of adjacent centers with
// raised-cosine transitions spanning half the spacing between centers. The lowest band
// extends to DC and the highest to Nyquist.
class CrossoverBank {
 public:
  CrossoverBank(std::vector<double> centers, double fs, std::size_t nfft)
      : centers_(std::move(centers)), fs_(fs), nfft_(nfft) {
    if (centers_.empty()) throw std::invalid_argument("crossover: no bands");
    for (std::size_t b = 1; b < centers_.size(); ++b) {
      if (!(centers_[b] > centers_[b - 1])) {
        throw std::invalid_argument("crossover: centers must increase");
      }
    }
    const std::size_t bins = nfft / 2 + 1;
    const std::size_t nb = centers_.size();
    weights_.assign(nb, std::vector<double>(bins, 0.0));
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * fs / static_cast<double>(nfft);
      double prev_upper = 1.0;
      for (std::size_t b = 0; b < nb; ++b) {
        const double upper = b + 1 < nb ? upper_fraction(f, b) : 0.0;
        weights_[b][k] = prev_upper - upper;
        prev_upper = upper;
      }
    }
  }

  std::size_t bands() const { return centers_.size(); }
  std::size_t fft_size() const { return nfft_; }
  const std::vector<double>& centers() const { return centers_; }
  const std::vector<double>& weights(std::size_t band) const { return weights_.at(band); }

  // Filters `x` (length <= fft size) with band `b` using circular convolution;
  // callers pad so the non-causal skirts do not wrap.
  std::vector<double> apply(RealFft& fft, std::span<const double> x, std::size_t b) const {
    if (fft.size() != nfft_) throw std::invalid_argument("crossover: fft size mismatch");
    auto spec = fft.forward(x);
    const auto& w = weights_.at(b);
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= w[k];
    return fft.inverse(spec);
  }

 private:
  // Fraction of energy at `f` assigned above the crossover between band b and b+1.
  double upper_fraction(double f, std::size_t b) const {
    if (f <= 0) return 0.0;
    const double xc = 0.5 * (std::log2(centers_[b]) + std::log2(centers_[b + 1]));
    const double half = 0.25 * (std::log2(centers_[b + 1]) - std::log2(centers_[b]));
    const double x = std::log2(f);
    if (x <= xc - half) return 0.0;
    if (x >= xc + half) return 1.0;
    return 0.5 * (1.0 - std::cos(std::numbers::pi * (x - xc + half) / (2.0 * half)));
  }

  std::vector<double> centers_;
  double fs_;
  std::size_t nfft_;
  std::vector<std::vector<double>> weights_;
};

}  // namespace srirgen::dsp
