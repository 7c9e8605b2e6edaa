#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "srirgen/analysis/report.hpp"
#include "srirgen/core/rng.hpp"
#include "srirgen/dsp/fractional_delay.hpp"

using namespace srirgen;
using namespace srirgen::analysis;
using room::Vec3;

namespace {

constexpr double kPi = std::numbers::pi;

double energy(const std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  return e;
}

Channels replicate(const std::vector<double>& x) { return Channels(4, x); }

// Plane wave arriving from `toward` (unit, pointing at the source) at each capsule.
Channels plane_wave(const room::MicArray& arr, const Vec3& toward, double fs, std::size_t len, double delay) {
  Channels out(4, std::vector<double>(len, 0.0));
  for (int c = 0; c < 4; ++c) {
    const double d = delay - arr.offsets[c].dot(toward) / room::kSpeedOfSound * fs;
    dsp::add_fractional_impulse(out[c], d, room::cardioid_gain(arr.looks[c], toward));
  }
  return out;
}

Vec3 random_direction(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

}  // namespace

TEST(Filterbank, UnityGainAtCenterAndAttenuatesOutside) {
  const double fs = 48000;
  const Butterworth6Bandpass bp(1000 / std::numbers::sqrt2, 1000 * std::numbers::sqrt2, fs);
  const double w = [&] {
    const double k = 2 * fs;
    const double w1 = k * std::tan(kPi * 1000 / std::numbers::sqrt2 / fs);
    const double w2 = k * std::tan(kPi * 1000 * std::numbers::sqrt2 / fs);
    return 2 * std::atan(std::sqrt(w1 * w2) / k);
  }();
  EXPECT_NEAR(std::abs(bp.response(w)), 1.0, 1e-9);
  // Edges are -3 dB for a Butterworth prototype.
  EXPECT_NEAR(std::abs(bp.response(2 * kPi * 1000 / std::numbers::sqrt2 / fs)), std::sqrt(0.5), 1e-6);
  EXPECT_NEAR(std::abs(bp.response(2 * kPi * 1000 * std::numbers::sqrt2 / fs)), std::sqrt(0.5), 1e-6);
  EXPECT_LT(std::abs(bp.response(2 * kPi * 125 / fs)), 1e-3);
}

TEST(Filterbank, ToneLandsInItsBand) {
  const double fs = 16000;
  std::vector<double> x(16000);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::sin(2 * kPi * 1000 * n / fs);
  const std::vector<double> centers{250, 1000};
  const auto bands = octave_filterbank(x, centers, fs);
  EXPECT_GE(energy(bands[1]), 100 * energy(bands[0]));
}

TEST(Filterbank, WhiteNoiseDoublesPerOctave) {
  const double fs = 16000;
  const std::vector<double> centers{125, 250, 500, 1000, 2000, 4000};
  std::vector<double> ratio_sum(centers.size() - 1, 0.0);
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<double> x(32000);
    for (double& v : x) v = rng.normal();
    const auto bands = octave_filterbank(x, centers, fs);
    for (std::size_t b = 1; b < centers.size(); ++b) ratio_sum[b - 1] += energy(bands[b]) / energy(bands[b - 1]);
  }
  for (double r : ratio_sum) EXPECT_NEAR(r / 10, 2.0, 0.5);
}

TEST(Filterbank, RejectsCenterAboveNyquist) {
  std::vector<double> x(100, 0.0);
  const std::vector<double> centers{4000};
  EXPECT_THROW(octave_filterbank(x, centers, 8000), std::invalid_argument);
}

TEST(Edc, ImpulseIsFlatThenFloor) {
  std::vector<double> h(100, 0.0);
  h[0] = 1;
  const auto edc = schroeder_edc(h, 1000);
  EXPECT_DOUBLE_EQ(edc.db[0], 0.0);
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_DOUBLE_EQ(edc.db[i], kEdcFloorDb);
}

TEST(Edc, ConstantSignalIsLinearInRemainingEnergy) {
  std::vector<double> h(100, 1.0);
  const auto edc = schroeder_edc(h, 1000);
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_NEAR(edc.db[i], 10 * std::log10((100.0 - i) / 100.0), 1e-9);
  }
}

TEST(Edc, ZeroInputThrows) {
  std::vector<double> h(10, 0.0);
  EXPECT_THROW(schroeder_edc(h, 1000), AnalysisError);
}

TEST(Rt, ExponentialDecayRecovered) {
  const double fs = 16000;
  const std::vector<double> centers{125, 250, 500, 1000, 2000, 4000};
  for (double rt : {0.2, 0.5, 1.0, 2.0}) {
    for (std::size_t b = 0; b < centers.size(); ++b) {
      std::vector<double> x(static_cast<std::size_t>(fs * 3 * rt));
      for (std::size_t n = 0; n < x.size(); ++n) {
        const double t = n / fs;
        x[n] = std::exp(-3 * std::log(10.0) * t / rt) * std::sin(2 * kPi * centers[b] * t);
      }
      const auto rts = rt_per_band(x, std::span(centers).subspan(b, 1), fs);
      EXPECT_NEAR(rts[0], rt, 0.01 * rt) << "band " << centers[b] << " rt " << rt;
    }
  }
}

TEST(Rt, ShortDecayFallsBackToT20ThenFails) {
  const double fs = 1000;
  // Linear EDC from 0 to -30 dB.
  EnergyDecayCurve edc{std::vector<double>(301), fs};
  for (int i = 0; i <= 300; ++i) edc.db[i] = -0.1 * i;
  EXPECT_THROW(rt_from_edc(edc, RtMethod::kT30), AnalysisError);
  EXPECT_NEAR(rt_auto(edc), 0.6, 1e-9);
  for (int i = 0; i <= 300; ++i) edc.db[i] = -0.05 * i;  // only -15 dB
  try {
    rt_auto(edc);
    FAIL();
  } catch (const AnalysisError& e) {
    EXPECT_NE(std::string(e.what()).find("-15"), std::string::npos);
  }
}

TEST(Rt, MidRtAveragesFiveHundredAndOneK) {
  const std::vector<double> centers{125, 250, 500, 1000};
  const std::vector<double> rt{1, 2, 0.4, 0.6};
  EXPECT_DOUBLE_EQ(mid_rt(rt, centers), 0.5);
}

TEST(Drr, TwoBursts) {
  const double fs = 8000;
  for (double db : {-10.0, 0.0, 10.0}) {
    std::vector<double> x(4000, 0.0);
    x[200] = 1.0;
    x[1200] = std::pow(10.0, -db / 20);
    EXPECT_NEAR(broadband_drr(replicate(x), fs), db, 1e-9);
  }
}

TEST(Drr, GainInvariantAndClamped) {
  const double fs = 48000;
  Rng rng(3);
  std::vector<double> x(9600, 0.0);
  x[500] = 1.0;
  for (std::size_t n = 600; n < x.size(); ++n) x[n] = 0.05 * rng.normal() * std::exp(-(n - 600.0) / 2000.0);
  const double d = broadband_drr(replicate(x), fs);
  auto y = x;
  for (double& v : y) v *= 37.0;
  EXPECT_NEAR(broadband_drr(replicate(y), fs), d, 1e-9);

  std::vector<double> only(1000, 0.0);
  only[100] = 1;
  EXPECT_DOUBLE_EQ(broadband_drr(replicate(only), fs), 80.0);
}

TEST(Drr, WindowIsCenteredAndClipped) {
  auto w = direct_window(100, 48000, 1000);
  EXPECT_EQ(w.end - w.begin, 60u);
  EXPECT_EQ(w.begin, 70u);
  w = direct_window(5, 48000, 1000);
  EXPECT_EQ(w.begin, 0u);
  EXPECT_EQ(w.end, 35u);
}

TEST(Toa, IntegerAndFractionalArrivals) {
  const double fs = 48000;
  std::vector<double> x(2000, 0.0);
  x[480] = 1;
  x[900] = 0.5;
  EXPECT_NEAR(toa_estimate(replicate(x), fs), 0.01, 1e-12);
  std::vector<double> y(2000, 0.0);
  dsp::add_fractional_impulse(y, 480.3, 1.0);
  EXPECT_NEAR(toa_estimate(replicate(y), fs) * fs, 480.3, 0.5);
}

TEST(Toa, WeakChannelIgnored) {
  const double fs = 48000;
  Channels x(4, std::vector<double>(2000, 0.0));
  for (int c = 0; c < 3; ++c) x[c][480] = 1;
  x[3][482] = 0.01;
  EXPECT_NEAR(toa_estimate(x, fs) * fs, 480.0, 1e-9);
}

TEST(Doa, PlaneWaveDirections) {
  for (double fs : {48000.0, 8000.0}) {
    const auto arr = room::array_geometry(Vec3::Zero());
    Rng rng(11);
    double sum = 0;
    for (int k = 0; k < 100; ++k) {
      const Vec3 u = random_direction(rng);
      const auto x = plane_wave(arr, u, fs, 512, 100.37);
      sum += great_circle_error(doa_direct(x, fs, arr), u);
    }
    EXPECT_LT(sum / 100, 2.0) << "fs " << fs;
    for (const Vec3& u : {Vec3(1, 0, 0), Vec3(0, 0, -1)}) {
      EXPECT_LT(great_circle_error(doa_direct(plane_wave(arr, u, fs, 512, 100.0), fs, arr), u), 2.0);
    }
  }
}

TEST(Doa, FreeFieldSimulation) {
  const auto room = room::shoebox(Vec3(30, 30, 30));
  auto absorbing = room;
  room::set_uniform_absorption(absorbing, room::BandValues{1, 1, 1, 1, 1, 1});
  const auto arr = room::array_geometry(Vec3(15, 15, 15));
  room::SimConfig cfg;
  cfg.fs = 48000;
  cfg.duration = 0.05;
  cfg.max_order = 0;
  cfg.tail = false;
  Rng rng(5);
  for (int k = 0; k < 10; ++k) {
    const Vec3 u = random_direction(rng);
    const Vec3 src = arr.center + 3.0 * u;
    const auto s = room::simulate_srir(absorbing, src, arr, cfg);
    EXPECT_LT(great_circle_error(doa_direct(s.samples, cfg.fs, arr), u), 5.0);
  }
}

TEST(GreatCircle, Properties) {
  const Vec3 x(1, 0, 0), y(0, 1, 0);
  EXPECT_NEAR(great_circle_error(x, y), 90, 1e-12);
  EXPECT_NEAR(great_circle_error(x, -x), 180, 1e-12);
  EXPECT_DOUBLE_EQ(great_circle_error(x, x), 0);
  EXPECT_DOUBLE_EQ(great_circle_error(x, y), great_circle_error(y, x));
}

TEST(Jnd, RtBoundary) {
  EXPECT_TRUE(jnd_rt(1.1, 1.0));
  EXPECT_TRUE(jnd_rt(0.9, 1.0));
  EXPECT_FALSE(jnd_rt(1.11, 1.0));
  EXPECT_THROW(jnd_rt(1.0, 0.0), AnalysisError);
}

TEST(Jnd, DrrKnots) {
  EXPECT_DOUBLE_EQ(drr_jnd_threshold(0), 2.4);
  EXPECT_DOUBLE_EQ(drr_jnd_threshold(-10), 6.0);
  EXPECT_DOUBLE_EQ(drr_jnd_threshold(10), 6.0);
  EXPECT_DOUBLE_EQ(drr_jnd_threshold(25), 6.0);
  EXPECT_NEAR(drr_jnd_threshold(5), 4.2, 1e-12);
  EXPECT_TRUE(jnd_drr(2.4, 0));
  EXPECT_FALSE(jnd_drr(2.5, 0));
  EXPECT_TRUE(jnd_drr(20 + 6, 20));
}

TEST(Metrics, KnownValues) {
  std::vector<AcousticRow> pred(3), truth(3);
  const double tr[3] = {0.5, 1.0, 1.5}, pr[3] = {0.55, 1.2, 1.5};
  const double td[3] = {0, 5, 10}, pd[3] = {1, 5, 20};
  for (int i = 0; i < 3; ++i) {
    truth[i].mid_rt = tr[i];
    pred[i].mid_rt = pr[i];
    truth[i].drr_db = td[i];
    pred[i].drr_db = pd[i];
    truth[i].doa = Vec3(1, 0, 0);
    pred[i].doa = i == 0 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
  }
  const auto m = metrics_report(pred, truth);
  EXPECT_EQ(m.n, 3u);
  EXPECT_NEAR(m.mid_rt.rmse, std::sqrt((0.0025 + 0.04) / 3), 1e-12);
  EXPECT_NEAR(m.mid_rt.bias, 0.25 / 3, 1e-12);
  EXPECT_NEAR(m.mid_rt.pct_in_jnd, 200.0 / 3, 1e-9);
  EXPECT_NEAR(m.drr.pct_in_jnd, 200.0 / 3, 1e-9);
  EXPECT_NEAR(m.doa_error_deg, 30.0, 1e-9);
  EXPECT_GT(m.mid_rt.rho, 0.9);
}

TEST(Metrics, ConstantTruthGivesUndefinedCorrelation) {
  std::vector<AcousticRow> pred(2), truth(2);
  for (int i = 0; i < 2; ++i) {
    truth[i].mid_rt = 1.0;
    pred[i].mid_rt = 1.0 + 0.1 * i;
    truth[i].doa = pred[i].doa = Vec3(0, 0, 1);
  }
  const auto m = metrics_report(pred, truth);
  EXPECT_TRUE(std::isnan(m.mid_rt.rho));
  EXPECT_THROW(metrics_report({pred[0]}, {truth[0]}), AnalysisError);
}

TEST(Report, AnalyzeSimulatedRoom) {
  auto room = room::shoebox(Vec3(6, 5, 3));
  room::set_uniform_absorption(room, room::BandValues{0.3, 0.3, 0.3, 0.3, 0.3, 0.3});
  const auto arr = room::array_geometry(Vec3(3.2, 2.4, 1.5));
  room::SimConfig cfg;
  cfg.fs = 8000;
  cfg.duration = 1.0;
  cfg.max_order = 8;
  const Vec3 src(1.0, 1.2, 1.4);
  const auto s = room::simulate_srir(room, src, arr, cfg);
  const auto row = analyze_srir(s.samples, cfg.fs, arr);
  const double sabine = room::sabine_rt(room)[3];
  EXPECT_NEAR(row.mid_rt, sabine, 0.35 * sabine);
  EXPECT_LT(great_circle_error(row.doa, (src - arr.center).normalized()), 10.0);
  EXPECT_NEAR(row.toa_s, (src - arr.center).norm() / room::kSpeedOfSound, 2.0 / cfg.fs);
  const auto csv = rows_csv({row});
  EXPECT_NE(csv.find("rt_125,rt_250"), std::string::npos);
}
