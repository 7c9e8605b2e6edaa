#pragma once

#include <cmath>
#include <numbers>
#include <span>

namespace srirgen::dsp {

inline constexpr int kFractionalDelayTaps = 32;
inline constexpr const char* kFractionalDelayVersion = "hann-sinc-32";

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Adds amp * delta(n - delay) band-limited by a Hann-windowed sinc spanning
// 32 taps (floor(delay)-15 .. floor(delay)+16). Taps outside the buffer are dropped.
inline void add_fractional_impulse(std::span<double> out, double delay, double amp) {
  constexpr int half = kFractionalDelayTaps / 2;
  const double base = std::floor(delay);
  const long first = static_cast<long>(base) - (half - 1);
  for (int k = 0; k < kFractionalDelayTaps; ++k) {
    const long n = first + k;
    if (n < 0 || n >= static_cast<long>(out.size())) continue;
    const double t = static_cast<double>(n) - delay;
    if (std::abs(t) >= half) continue;
    const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * t / half));
    out[static_cast<std::size_t>(n)] += amp * w * sinc(t);
  }
}

}  // namespace srirgen::dsp
