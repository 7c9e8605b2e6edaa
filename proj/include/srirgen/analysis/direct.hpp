#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numbers>
#include <vector>

#include "srirgen/analysis/decay.hpp"
#include "srirgen/dsp/fft.hpp"
#include "srirgen/room/array.hpp"
#include "srirgen/room/simulate.hpp"

namespace srirgen::analysis {

using room::Channels;
using room::Vec3;

inline constexpr double kDirectWindowSeconds = 1.25e-3;
inline constexpr double kDrrClampDb = 80.0;

// Mean of the channels (omni-like for a coincident cardioid array).
inline std::vector<double> omni_channel(const Channels& x) {
  if (x.empty() || x[0].empty()) throw AnalysisError("empty response");
  std::vector<double> out(x[0].size(), 0.0);
  for (const auto& ch : x) {
    if (ch.size() != out.size()) throw AnalysisError("channels differ in length");
    for (std::size_t n = 0; n < ch.size(); ++n) out[n] += ch[n] / static_cast<double>(x.size());
  }
  return out;
}

inline std::size_t argmax_abs(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t n = 1; n < x.size(); ++n) {
    if (std::abs(x[n]) > std::abs(x[best])) best = n;
  }
  return best;
}

struct DirectWindow {
  std::size_t begin = 0, end = 0;  // half-open
};

// round(1.25 ms * fs) samples centered on `peak`, clipped at the signal start.
inline DirectWindow direct_window(std::size_t peak, double fs, std::size_t length) {
  const auto w = static_cast<long>(std::max(1.0, std::round(kDirectWindowSeconds * fs)));
  const long start = static_cast<long>(peak) - w / 2;
  DirectWindow d;
  d.begin = static_cast<std::size_t>(std::max(0L, start));
  d.end = static_cast<std::size_t>(std::min(static_cast<long>(length), start + w));
  return d;
}

inline std::size_t direct_peak(const std::vector<double>& omni);

// Energy inside the direct window over energy outside, summed over channels.
inline double broadband_drr(const Channels& x, double fs) {
  const auto omni = omni_channel(x);
  if (omni[argmax_abs(omni)] == 0.0) throw AnalysisError("broadband_drr: silent input");
  const std::size_t peak = direct_peak(omni);
  const DirectWindow win = direct_window(peak, fs, omni.size());
  double direct = 0, rest = 0;
  for (const auto& ch : x) {
    for (std::size_t n = 0; n < ch.size(); ++n) {
      (n >= win.begin && n < win.end ? direct : rest) += ch[n] * ch[n];
    }
  }
  if (rest <= 0) return kDrrClampDb;
  return std::clamp(10.0 * std::log10(direct / rest), -kDrrClampDb, kDrrClampDb);
}

// Vertex of the parabola through (i-1, i, i+1); offset in [-0.5, 0.5].
inline double parabolic_offset(double ym, double y0, double yp) {
  const double den = ym - 2.0 * y0 + yp;
  if (den >= 0) return 0.0;
  return std::clamp(0.5 * (ym - yp) / den, -0.5, 0.5);
}

// Direct-sound peak on the omni channel: first sample above -20 dB re the
// global peak, advanced to the following local maximum.
inline std::size_t direct_peak(const std::vector<double>& omni) {
  const std::size_t gpeak = argmax_abs(omni);
  const double level = std::abs(omni[gpeak]);
  if (level == 0.0) throw AnalysisError("toa_estimate: silent input");
  std::size_t i = 0;
  while (std::abs(omni[i]) < 0.1 * level) ++i;
  while (i + 1 < omni.size() && std::abs(omni[i + 1]) >= std::abs(omni[i])) ++i;
  return i;
}

// Onset on the omni channel, refined per channel to a sub-sample peak near it
// and averaged over channels carrying a usable direct peak.
inline double toa_estimate(const Channels& x, double fs) {
  const auto omni = omni_channel(x);
  const std::size_t peak = direct_peak(omni);
  std::vector<double> times, levels;
  for (const auto& ch : x) {
    const std::size_t lo = peak >= 2 ? peak - 2 : 0;
    const std::size_t hi = std::min(ch.size() - 1, peak + 2);
    std::size_t best = lo;
    for (std::size_t n = lo; n <= hi; ++n) {
      if (std::abs(ch[n]) > std::abs(ch[best])) best = n;
    }
    double t = static_cast<double>(best);
    if (best > 0 && best + 1 < ch.size()) {
      t += parabolic_offset(std::abs(ch[best - 1]), std::abs(ch[best]), std::abs(ch[best + 1]));
    }
    times.push_back(t);
    levels.push_back(std::abs(ch[best]));
  }
  const double top = *std::max_element(levels.begin(), levels.end());
  double acc = 0;
  int used = 0;
  for (std::size_t c = 0; c < times.size(); ++c) {
    if (levels[c] >= 0.1 * top) {
      acc += times[c];
      ++used;
    }
  }
  return acc / used / fs;
}

// Cross-correlation lag of b relative to a (positive when b arrives later),
// evaluated on an FFT-interpolated grid and refined parabolically.
inline double xcorr_lag(std::span<const double> a, std::span<const double> b, double max_lag, int upsample) {
  const std::size_t n = dsp::next_pow2(2 * std::max(a.size(), b.size()));
  dsp::RealFft fft(n);
  auto fa = fft.forward(a);
  auto fb = fft.forward(b);
  const std::size_t nu = n * static_cast<std::size_t>(upsample);
  std::vector<dsp::Complex> cross(nu / 2 + 1, 0.0);
  for (std::size_t k = 0; k < fa.size(); ++k) cross[k] = std::conj(fa[k]) * fb[k];
  cross[n / 2] *= 0.5;  // split the old Nyquist bin
  dsp::RealFft ifft(nu);
  const auto r = ifft.inverse(cross);
  const long lim = static_cast<long>(std::ceil(max_lag * upsample));
  long best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (long l = -lim; l <= lim; ++l) {
    const double v = r[static_cast<std::size_t>((l + static_cast<long>(nu)) % static_cast<long>(nu))];
    if (v > best_v) {
      best_v = v;
      best = l;
    }
  }
  auto at = [&](long l) { return r[static_cast<std::size_t>((l + static_cast<long>(nu)) % static_cast<long>(nu))]; };
  const double off = parabolic_offset(at(best - 1), at(best), at(best + 1));
  return (static_cast<double>(best) + off) / upsample;
}

// Far-field direction toward the source from pairwise TDOAs of the direct
// segment: least squares on (m_i - m_j) . u = -c * tau_ij, then normalized.
inline Vec3 doa_direct(const Channels& x, double fs, const room::MicArray& array) {
  if (x.size() != 4) throw AnalysisError("doa_direct: expected 4 channels");
  const auto omni = omni_channel(x);
  const std::size_t peak = direct_peak(omni);
  const auto win = static_cast<long>(std::round(kDirectWindowSeconds * fs));
  const long half = std::max(2L, win / 2 + 2);
  const std::size_t lo = static_cast<std::size_t>(std::max(0L, static_cast<long>(peak) - half));
  const std::size_t hi = std::min(x[0].size(), peak + static_cast<std::size_t>(half) + 1);
  std::vector<std::vector<double>> seg(4);
  for (int c = 0; c < 4; ++c) seg[c].assign(x[c].begin() + static_cast<long>(lo), x[c].begin() + static_cast<long>(hi));
  double max_baseline = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) max_baseline = std::max(max_baseline, (array.offsets[i] - array.offsets[j]).norm());
  }
  const double max_lag = max_baseline / room::kSpeedOfSound * fs + 1.0;
  const int up = std::max(1, static_cast<int>(dsp::next_pow2(static_cast<std::size_t>(std::ceil(384000.0 / fs)))));
  std::array<double, 4> level{};
  for (int c = 0; c < 4; ++c) level[c] = std::abs(seg[c][argmax_abs(seg[c])]);
  const double top = *std::max_element(level.begin(), level.end());
  if (!(top > 0)) throw AnalysisError("doa_direct: silent direct segment");
  // Pairs are weighted by their weaker capsule; a capsule facing away from the
  // source carries no timing information.
  Eigen::Matrix<double, 6, 3> A = Eigen::Matrix<double, 6, 3>::Zero();
  Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
  int row = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j, ++row) {
      const double w = std::min(level[i], level[j]) / top;
      if (w < 1e-3) continue;
      const double tau = xcorr_lag(seg[j], seg[i], max_lag, up) / fs;  // t_i - t_j
      A.row(row) = w * (array.offsets[i] - array.offsets[j]).transpose();
      rhs(row) = -w * room::kSpeedOfSound * tau;
    }
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 6, 3>> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0) || sv(1) < 1e-6 * sv(0)) throw AnalysisError("doa_direct: rank-deficient array geometry");
  if (sv(2) >= 1e-6 * sv(0)) {
    const Vec3 u = svd.solve(rhs);
    if (!(u.norm() > 0)) throw AnalysisError("doa_direct: zero direction estimate");
    return u.normalized();
  }
  // One capsule dropped out: the remaining pairs span a plane. Complete the
  // estimate to unit length along the null direction and pick the sign whose
  // cardioid gains best match the observed levels.
  const Vec3 null = svd.matrixV().col(2);
  Eigen::JacobiSVD<Eigen::Matrix<double, 6, 2>> sub(A * svd.matrixV().leftCols(2),
                                                   Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 in_plane = svd.matrixV().leftCols(2) * sub.solve(rhs);
  const double along = std::sqrt(std::max(0.0, 1.0 - std::min(1.0, in_plane.squaredNorm())));
  Vec3 best = Vec3::Zero();
  double best_err = std::numeric_limits<double>::infinity();
  for (double sign : {1.0, -1.0}) {
    Vec3 u = in_plane + sign * along * null;
    u.normalize();
    std::array<double, 4> g{};
    for (int c = 0; c < 4; ++c) g[c] = 0.5 * (1.0 + array.looks[c].dot(u));
    const double gmax = *std::max_element(g.begin(), g.end());
    double err = 0;
    for (int c = 0; c < 4; ++c) err += std::pow(g[c] / gmax - level[c] / top, 2);
    if (err < best_err) {
      best_err = err;
      best = u;
    }
  }
  return best;
}

inline double great_circle_error(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.dot(b), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace srirgen::analysis
