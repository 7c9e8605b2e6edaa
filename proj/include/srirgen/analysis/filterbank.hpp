#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace srirgen::analysis {

// Second-order section with numerator 1 - z^-2 scaled by `gain`.
struct BandpassSection {
  double gain = 1.0;
  double a1 = 0, a2 = 0;
};

// 6th-order Butterworth band-pass (order-3 prototype) between f1 and f2, via
// the low-pass to band-pass transform and the bilinear transform with
// prewarped edges. Unity gain at the geometric center.
class Butterworth6Bandpass {
 public:
  Butterworth6Bandpass(double f1, double f2, double fs) {
    if (!(f1 > 0 && f2 > f1 && f2 < fs / 2)) {
      throw std::invalid_argument("butterworth: band edges must satisfy 0 < f1 < f2 < fs/2");
    }
    using C = std::complex<double>;
    const double k = 2.0 * fs;
    const double w1 = k * std::tan(std::numbers::pi * f1 / fs);
    const double w2 = k * std::tan(std::numbers::pi * f2 / fs);
    const double w0sq = w1 * w2, bw = w2 - w1;
    std::vector<C> upper;  // analog band-pass poles with positive imaginary part
    for (int i = 0; i < 3; ++i) {
      const C p = std::polar(1.0, std::numbers::pi * (2.0 * i + 4.0) / 6.0);
      const C disc = std::sqrt(p * p * bw * bw - 4.0 * w0sq);
      for (const C s : {(p * bw + disc) / 2.0, (p * bw - disc) / 2.0}) {
        if (s.imag() > 0) upper.push_back(s);
      }
    }
    if (upper.size() != 3) throw std::runtime_error("butterworth: unexpected pole layout");
    for (const C& s : upper) {
      const C z = (k + s) / (k - s);
      sections_.push_back({1.0, -2.0 * z.real(), std::norm(z)});
    }
    const double wc = 2.0 * std::atan(std::sqrt(w0sq) / k);
    const double mag = std::abs(response(wc));
    sections_[0].gain = 1.0 / mag;
  }

  const std::vector<BandpassSection>& sections() const { return sections_; }

  // Complex response at digital frequency w (rad/sample).
  std::complex<double> response(double w) const {
    const std::complex<double> zi = std::polar(1.0, -w);
    std::complex<double> h = 1.0;
    for (const auto& s : sections_) {
      h *= s.gain * (1.0 - zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    }
    return h;
  }

  void filter_inplace(std::vector<double>& x) const {
    for (const auto& s : sections_) {
      double z1 = 0, z2 = 0;  // transposed direct form II
      for (double& v : x) {
        const double in = v;
        const double out = s.gain * in + z1;
        z1 = z2 - s.a1 * out;
        z2 = -s.gain * in - s.a2 * out;
        v = out;
      }
    }
  }

  // Forward-backward filtering with zero padding on both sides.
  std::vector<double> filtfilt(std::span<const double> x, std::size_t pad) const {
    std::vector<double> buf(x.size() + 2 * pad, 0.0);
    std::copy(x.begin(), x.end(), buf.begin() + static_cast<long>(pad));
    filter_inplace(buf);
    std::reverse(buf.begin(), buf.end());
    filter_inplace(buf);
    std::reverse(buf.begin(), buf.end());
    return {buf.begin() + static_cast<long>(pad), buf.begin() + static_cast<long>(pad + x.size())};
  }

 private:
  std::vector<BandpassSection> sections_;
};

// Zero-phase octave bands with edges center/sqrt2 .. center*sqrt2.
inline std::vector<std::vector<double>> octave_filterbank(std::span<const double> signal,
                                                          std::span<const double> centers, double fs) {
  std::vector<std::vector<double>> out;
  const auto pad = static_cast<std::size_t>(std::ceil(0.2 * fs));
  for (double c : centers) {
    if (!(c > 0 && c < fs / 2)) {
      throw std::invalid_argument("octave_filterbank: center " + std::to_string(c) +
                                  " Hz not below Nyquist " + std::to_string(fs / 2));
    }
    const Butterworth6Bandpass bp(c / std::numbers::sqrt2, std::min(c * std::numbers::sqrt2, 0.499 * fs), fs);
    out.push_back(bp.filtfilt(signal, pad));
  }
  return out;
}

}  // namespace srirgen::analysis
