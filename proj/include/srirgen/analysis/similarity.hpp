#pragma once

#include <cmath>
#include <vector>

#include "srirgen/analysis/direct.hpp"
#include "srirgen/dsp/fft.hpp"

namespace srirgen::analysis {

struct LagMatch {
  double ncc = 0;
  long lag = 0;  // b delayed by `lag` samples best matches a
};

// Normalized cross-correlation of two multichannel responses, maximized over
// one integer lag shared by all channels (|lag| <= max_lag).
inline LagMatch best_lag_ncc(const Channels& a, const Channels& b, std::size_t max_lag) {
  if (a.size() != b.size() || a.empty()) throw AnalysisError("best_lag_ncc: channel counts differ");
  std::size_t len = 0;
  double ea = 0, eb = 0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    len = std::max({len, a[c].size(), b[c].size()});
    for (double v : a[c]) ea += v * v;
    for (double v : b[c]) eb += v * v;
  }
  if (!(ea > 0) || !(eb > 0)) throw AnalysisError("best_lag_ncc: silent input");
  const std::size_t n = dsp::next_pow2(2 * len);
  dsp::RealFft fft(n);
  std::vector<dsp::Complex> acc(fft.bins());
  for (std::size_t c = 0; c < a.size(); ++c) {
    const auto fa = fft.forward(a[c]);
    const auto fb = fft.forward(b[c]);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += fa[k] * std::conj(fb[k]);
  }
  const auto r = fft.inverse(acc);  // r[l] = sum a[t + l] b[t]
  LagMatch best{-2.0, 0};
  const long m = static_cast<long>(std::min(max_lag, len - 1));
  for (long l = -m; l <= m; ++l) {
    const double v = r[static_cast<std::size_t>((l + static_cast<long>(n)) % static_cast<long>(n))];
    if (v > best.ncc) best = {v, l};
  }
  best.ncc /= std::sqrt(ea * eb);
  return best;
}

}  // namespace srirgen::analysis
