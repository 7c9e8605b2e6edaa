#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srirgen/analysis/filterbank.hpp"

namespace srirgen::analysis {

inline constexpr double kEdcFloorDb = -120.0;

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EnergyDecayCurve {
  std::vector<double> db;  // 0 dB at t = 0, non-increasing
  double sample_rate = 0;
};

enum class RtMethod { kT20, kT30 };

// Backward-integrated energy, normalized to 0 dB at the first sample and
// floored at -120 dB.
inline EnergyDecayCurve schroeder_edc(std::span<const double> h, double fs) {
  if (h.empty()) throw AnalysisError("schroeder_edc: empty channel");
  std::vector<double> acc(h.size());
  double run = 0;
  for (std::size_t i = h.size(); i-- > 0;) {
    run += h[i] * h[i];
    acc[i] = run;
  }
  if (!(run > 0)) throw AnalysisError("schroeder_edc: all-zero input");
  EnergyDecayCurve edc{std::vector<double>(h.size()), fs};
  double prev = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    double v = acc[i] > 0 ? 10.0 * std::log10(acc[i] / run) : kEdcFloorDb;
    v = std::min(prev, std::max(v, kEdcFloorDb));
    edc.db[i] = v;
    prev = v;
  }
  edc.db[0] = 0.0;
  return edc;
}

// Least-squares decay slope over [-5, -25] dB (T20, x3) or [-5, -35] dB (T30, x2).
inline double rt_from_edc(const EnergyDecayCurve& edc, RtMethod method) {
  const double lo = method == RtMethod::kT30 ? -35.0 : -25.0;
  const double hi = -5.0;
  const double reached = edc.db.empty() ? 0.0 : edc.db.back();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  bool hit_lo = false;
  for (std::size_t i = 0; i < edc.db.size(); ++i) {
    const double v = edc.db[i];
    if (v <= lo) {
      hit_lo = true;
      break;
    }
    if (v > hi) continue;
    const double t = static_cast<double>(i) / edc.sample_rate;
    sx += t;
    sy += v;
    sxx += t * t;
    sxy += t * v;
    ++n;
  }
  if (!hit_lo) {
    throw AnalysisError("rt_from_edc: decay only reaches " + std::to_string(reached) + " dB, need " +
                        std::to_string(lo) + " dB");
  }
  if (n < 2) throw AnalysisError("rt_from_edc: no samples between -5 dB and " + std::to_string(lo) + " dB");
  const double denom = n * sxx - sx * sx;
  if (!(denom > 0)) throw AnalysisError("rt_from_edc: degenerate decay range");
  const double slope = (n * sxy - sx * sy) / denom;  // dB per second
  if (!(slope < 0)) throw AnalysisError("rt_from_edc: non-decaying fit");
  return -60.0 / slope;
}

// T30, falling back to T20 when the decay does not reach -35 dB.
inline double rt_auto(const EnergyDecayCurve& edc) {
  try {
    return rt_from_edc(edc, RtMethod::kT30);
  } catch (const AnalysisError&) {
    return rt_from_edc(edc, RtMethod::kT20);
  }
}

// Index where the response meets its noise floor: the floor is the mean power
// of the final 10% of samples and the cut is the first 10 ms block whose mean
// power drops within 3 dB of it.
inline std::size_t noise_floor_cut(std::span<const double> h, double fs) {
  const std::size_t n = h.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  double floor = 0;
  for (std::size_t i = n - tail; i < n; ++i) floor += h[i] * h[i];
  floor /= static_cast<double>(tail);
  if (floor <= 0) return n;
  const auto block = std::max<std::size_t>(1, static_cast<std::size_t>(0.01 * fs));
  std::size_t peak = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(h[i]) > std::abs(h[peak])) peak = i;
  }
  for (std::size_t start = peak; start + block <= n; start += block) {
    double p = 0;
    for (std::size_t i = start; i < start + block; ++i) p += h[i] * h[i];
    if (p / static_cast<double>(block) <= 2.0 * floor) return std::max<std::size_t>(start, 1);
  }
  return n;
}

// Reverberation time of one band-limited channel, after noise-floor truncation.
inline double band_rt(std::span<const double> band, double fs) {
  const std::size_t cut = noise_floor_cut(band, fs);
  return rt_auto(schroeder_edc(band.first(cut), fs));
}

// Per-band RT of one channel; NaN where the decay range is insufficient.
inline std::vector<double> rt_per_band(std::span<const double> h, std::span<const double> centers, double fs) {
  std::vector<double> out;
  for (const auto& band : octave_filterbank(h, centers, fs)) {
    try {
      out.push_back(band_rt(band, fs));
    } catch (const AnalysisError&) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

// Mean of the 500 Hz and 1 kHz values.
inline double mid_rt(std::span<const double> rt, std::span<const double> centers) {
  double r500 = std::numeric_limits<double>::quiet_NaN(), r1k = r500;
  bool has500 = false, has1k = false;
  for (std::size_t i = 0; i < centers.size() && i < rt.size(); ++i) {
    if (centers[i] == 500) r500 = rt[i], has500 = true;
    if (centers[i] == 1000) r1k = rt[i], has1k = true;
  }
  if (!has500 || !has1k) throw AnalysisError("mid_rt: need both 500 Hz and 1 kHz bands");
  return 0.5 * (r500 + r1k);
}

}  // namespace srirgen::analysis
