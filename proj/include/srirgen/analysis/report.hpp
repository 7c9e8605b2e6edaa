#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "srirgen/analysis/decay.hpp"
#include "srirgen/analysis/direct.hpp"

namespace srirgen::analysis {

inline bool jnd_rt(double predicted, double truth) {
  if (!(truth > 0)) throw AnalysisError("jnd_rt: truth must be positive");
  return std::abs(predicted - truth) <= 0.10 * truth + 1e-12;
}

// Piecewise-linear DRR threshold through (-10, 6), (0, 2.4), (10, 6) dB,
// constant beyond +-10 dB.
inline double drr_jnd_threshold(double truth_db) {
  const double t = std::clamp(truth_db, -10.0, 10.0);
  return 2.4 + (6.0 - 2.4) * std::abs(t) / 10.0;
}

inline bool jnd_drr(double predicted_db, double truth_db) {
  if (!std::isfinite(predicted_db) || !std::isfinite(truth_db)) throw AnalysisError("jnd_drr: non-finite input");
  return std::abs(predicted_db - truth_db) <= drr_jnd_threshold(truth_db) + 1e-12;
}

struct AcousticRow {
  std::string room_id;
  std::string position_id;
  std::vector<double> rt_per_band;  // one per octave center, NaN when unmeasurable
  double mid_rt = std::numeric_limits<double>::quiet_NaN();
  double drr_db = 0;
  Vec3 doa = Vec3::Zero();
  double toa_s = 0;
};

// RT per band is the mean of the four per-channel estimates that succeed.
inline AcousticRow analyze_srir(const Channels& x, double fs, const room::MicArray& array) {
  AcousticRow row;
  std::vector<double> centers(room::kOctaveCenters.begin(), room::kOctaveCenters.end());
  std::vector<double> sum(centers.size(), 0.0);
  std::vector<int> count(centers.size(), 0);
  std::vector<double> usable;
  for (double c : centers) {
    if (c < fs / 2) usable.push_back(c);
  }
  for (const auto& ch : x) {
    const auto rts = rt_per_band(ch, usable, fs);
    for (std::size_t b = 0; b < rts.size(); ++b) {
      if (std::isfinite(rts[b])) {
        sum[b] += rts[b];
        ++count[b];
      }
    }
  }
  row.rt_per_band.assign(centers.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t b = 0; b < usable.size(); ++b) {
    if (count[b] > 0) row.rt_per_band[b] = sum[b] / count[b];
  }
  row.mid_rt = mid_rt(row.rt_per_band, centers);
  row.drr_db = broadband_drr(x, fs);
  row.toa_s = toa_estimate(x, fs);
  row.doa = doa_direct(x, fs, array);
  return row;
}

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

struct ScalarAggregate {
  std::size_t n = 0;
  double rmse = 0;
  double rho = kUndefined;  // NaN when either side is constant
  double bias = 0;          // mean(pred - truth)
  double pct_in_jnd = 0;
};

struct AcousticAggregate {
  ScalarAggregate mid_rt;
  ScalarAggregate drr;
  double doa_error_deg = 0;
  std::size_t n = 0;
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return kUndefined;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

template <typename Jnd>
ScalarAggregate aggregate(const std::vector<double>& pred, const std::vector<double>& truth, Jnd jnd) {
  ScalarAggregate out;
  std::vector<double> p, t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::isfinite(pred[i]) && std::isfinite(truth[i])) {
      p.push_back(pred[i]);
      t.push_back(truth[i]);
    }
  }
  out.n = p.size();
  if (p.empty()) {
    out.rmse = out.bias = out.pct_in_jnd = kUndefined;
    return out;
  }
  double se = 0, bias = 0;
  std::size_t in = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    se += (p[i] - t[i]) * (p[i] - t[i]);
    bias += p[i] - t[i];
    if (jnd(p[i], t[i])) ++in;
  }
  out.rmse = std::sqrt(se / p.size());
  out.bias = bias / p.size();
  out.pct_in_jnd = 100.0 * in / p.size();
  out.rho = p.size() >= 2 ? pearson(p, t) : kUndefined;
  return out;
}

// Pairs are matched by index.
inline AcousticAggregate metrics_report(const std::vector<AcousticRow>& pred,
                                        const std::vector<AcousticRow>& truth) {
  if (pred.size() != truth.size()) throw AnalysisError("metrics_report: row counts differ");
  if (pred.size() < 2) throw AnalysisError("metrics_report: need at least 2 pairs");
  std::vector<double> pr, tr, pd, td;
  double doa = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pr.push_back(pred[i].mid_rt);
    tr.push_back(truth[i].mid_rt);
    pd.push_back(pred[i].drr_db);
    td.push_back(truth[i].drr_db);
    doa += great_circle_error(pred[i].doa, truth[i].doa);
  }
  AcousticAggregate agg;
  agg.n = pred.size();
  agg.mid_rt = aggregate(pr, tr, [](double p, double t) { return t > 0 && jnd_rt(p, t); });
  agg.drr = aggregate(pd, td, jnd_drr);
  agg.doa_error_deg = doa / pred.size();
  return agg;
}

namespace detail {

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace detail

inline std::string rows_csv(const std::vector<AcousticRow>& rows) {
  std::ostringstream os;
  os << "# rt: mean of the per-channel T30 (T20 fallback) estimates over the 4 capsules\n";
  os << "room_id,position_id";
  for (double c : room::kOctaveCenters) os << ",rt_" << static_cast<int>(c);
  os << ",mid_rt,drr_db,doa_x,doa_y,doa_z,toa_s\n";
  for (const auto& r : rows) {
    os << r.room_id << ',' << r.position_id;
    for (std::size_t b = 0; b < room::kBandCount; ++b) {
      os << ',' << detail::fmt(b < r.rt_per_band.size() ? r.rt_per_band[b] : kUndefined);
    }
    os << ',' << detail::fmt(r.mid_rt) << ',' << detail::fmt(r.drr_db) << ',' << detail::fmt(r.doa.x()) << ','
       << detail::fmt(r.doa.y()) << ',' << detail::fmt(r.doa.z()) << ',' << detail::fmt(r.toa_s) << '\n';
  }
  return os.str();
}

inline std::string aggregate_csv(const AcousticAggregate& a) {
  std::ostringstream os;
  os << "# rt: mean of the per-channel T30 (T20 fallback) estimates over the 4 capsules\n";
  os << "n,mid_rt_rmse_s,mid_rt_rho,mid_rt_bias_s,mid_rt_pct_jnd,drr_rmse_db,drr_rho,drr_bias_db,drr_pct_jnd,"
        "doa_error_deg\n";
  os << a.n << ',' << detail::fmt(a.mid_rt.rmse) << ',' << detail::fmt(a.mid_rt.rho) << ','
     << detail::fmt(a.mid_rt.bias) << ',' << detail::fmt(a.mid_rt.pct_in_jnd) << ',' << detail::fmt(a.drr.rmse)
     << ',' << detail::fmt(a.drr.rho) << ',' << detail::fmt(a.drr.bias) << ',' << detail::fmt(a.drr.pct_in_jnd)
     << ',' << detail::fmt(a.doa_error_deg) << '\n';
  return os.str();
}

}  // namespace srirgen::analysis
