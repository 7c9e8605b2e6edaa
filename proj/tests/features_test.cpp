#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "srirgen/core/rng.hpp"
#include "srirgen/features/features.hpp"

using namespace srirgen;
using namespace srirgen::features;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> tone(double f, double fs, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * kPi * f * i / fs);
  return x;
}

std::vector<std::vector<double>> noise_scene(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<std::vector<double>> s(4, std::vector<double>(n));
  for (auto& ch : s) {
    for (double& v : ch) v = rng.normal();
  }
  return s;
}

}  // namespace

TEST(Stft, FrameArithmetic) {
  std::vector<double> x(192000, 0.0);
  const auto s = stft(x);
  EXPECT_EQ(s.frames, (192000u - 512u) / 128u + 1u);
  EXPECT_EQ(s.frames, 1497u);
  EXPECT_EQ(s.bins, 257u);
  EXPECT_EQ(frame_count(511, {}), 0u);
  EXPECT_THROW(stft(std::vector<double>(511, 0.0)), FeatureError);
}

TEST(Stft, TonePeaksAtExpectedBin) {
  const auto s = stft(tone(1000, 48000, 4800));
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < s.bins; ++k) {
      if (std::abs(s.at(t, k)) > std::abs(s.at(t, best))) best = k;
    }
    EXPECT_EQ(best, 11u);
  }
}

TEST(Stft, MatchesDirectDft) {
  // Constant input: each frame is the window itself, so the spectrum is the
  // window's DFT, computed here by the defining sum.
  const StftConfig cfg{64, 16};
  const auto s = stft(std::vector<double>(64, 1.0), cfg);
  const auto planes = logmag_if(s);
  for (std::size_t k = 0; k <= 32; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t n = 0; n < 64; ++n) {
      const double w = 0.5 - 0.5 * std::cos(2 * kPi * n / 64);
      acc += w * std::polar(1.0, -2 * kPi * k * n / 64);
    }
    EXPECT_NEAR(std::exp(planes[0][k]) - 1e-6, std::abs(acc), 1e-9) << k;
  }
}

TEST(LogmagIf, ZeroSignalIsFloorAndZeroIf) {
  const auto planes = logmag_if(stft(std::vector<double>(2048, 0.0)));
  for (double v : planes[0]) EXPECT_DOUBLE_EQ(v, std::log(1e-6));
  for (double v : planes[1]) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LogmagIf, ToneInstantaneousFrequency) {
  const auto s = stft(tone(1000, 48000, 48000));
  const auto planes = logmag_if(s);
  // 2.667 cycles per hop; the fractional part 2/3 cycle wraps to -1/3 cycle.
  const double cycles = 1000.0 * 128 / 48000;
  const double frac = cycles - std::round(cycles);
  const double expected = 2 * frac;
  EXPECT_NEAR(expected, -2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(planes[1][11], 0.0);  // first frame
  for (std::size_t t = 1; t < s.frames; ++t) EXPECT_NEAR(planes[1][t * s.bins + 11], expected, 1e-4);
}

TEST(LogmagIf, GainShiftsLogMagnitudeOnly) {
  Rng rng(4);
  std::vector<double> x(4096);
  for (double& v : x) v = rng.normal();
  auto y = x;
  const double g = 3.7;
  for (double& v : y) v *= g;
  const auto sx = stft(x), sy = stft(y);
  const auto px = logmag_if(sx), py = logmag_if(sy);
  for (std::size_t i = 0; i < px[0].size(); ++i) {
    if (std::abs(sx.data[i]) > 1.0) EXPECT_NEAR(py[0][i] - px[0][i], std::log(g), 1e-5);
    EXPECT_NEAR(py[1][i], px[1][i], 1e-9);
    EXPECT_GE(px[1][i], -1.0);
    EXPECT_LE(px[1][i], 1.0);
  }
}

TEST(NormStats, PopulationStdConvention) {
  Tensor<float> x({8, 1, 2});
  for (std::size_t p = 0; p < 8; ++p) {
    x[2 * p] = 0;
    x[2 * p + 1] = 2;
  }
  const auto st = dataset_stats({x});
  for (std::size_t p = 0; p < 8; ++p) {
    EXPECT_DOUBLE_EQ(st.mean[p], 1.0);
    EXPECT_DOUBLE_EQ(st.stddev[p], 1.0);
  }
}

TEST(NormStats, ZeroVarianceRejected) {
  Tensor<float> x({8, 2, 2}, 1.0f);
  EXPECT_THROW(dataset_stats({x}), FeatureError);
  EXPECT_THROW(dataset_stats({}), FeatureError);
}

TEST(NormStats, JsonRoundTrip) {
  NormStats st;
  for (std::size_t p = 0; p < 8; ++p) {
    st.mean[p] = 0.1 * p;
    st.stddev[p] = 1 + p;
  }
  st.dataset_id = "train";
  const auto back = norm_stats_from_json(to_json(st));
  EXPECT_EQ(back.mean, st.mean);
  EXPECT_EQ(back.stddev, st.stddev);
  EXPECT_EQ(back.dataset_id, "train");
}

TEST(SceneTensor, ShapeAndNormalization) {
  const SceneConfig cfg{8000, 1.0, {64, 16}};
  std::vector<Tensor<float>> raw;
  for (int s = 0; s < 3; ++s) raw.push_back(raw_features(noise_scene(s, 8000), cfg.samples(), cfg.stft));
  const auto st = dataset_stats(raw);
  std::vector<Tensor<float>> normed;
  for (int s = 0; s < 3; ++s) normed.push_back(scene_to_tensor(noise_scene(s, 8000), st, cfg));
  EXPECT_EQ(normed[0].shape(), (Shape{8, 497, 33}));
  const auto again = dataset_stats(normed);
  for (std::size_t p = 0; p < 8; ++p) {
    EXPECT_NEAR(again.mean[p], 0.0, 1e-4);
    EXPECT_NEAR(again.stddev[p], 1.0, 1e-4);
  }
}

TEST(SceneTensor, FullRateShape) {
  NormStats st;
  st.stddev.fill(1.0);
  const auto x = scene_to_tensor(noise_scene(1, 192000), st, SceneConfig{});
  EXPECT_EQ(x.shape(), (Shape{8, 1497, 257}));
}

TEST(SceneTensor, TruncatesLongerInput) {
  NormStats st;
  st.stddev.fill(2.0);
  const SceneConfig cfg{8000, 1.0, {64, 16}};
  auto longer = noise_scene(9, 10000);
  auto exact = longer;
  for (auto& ch : exact) ch.resize(8000);
  EXPECT_EQ(scene_to_tensor(longer, st, cfg).storage(), scene_to_tensor(exact, st, cfg).storage());
}

TEST(SceneTensor, RejectsBadInput) {
  NormStats st;
  st.stddev.fill(1.0);
  const SceneConfig cfg{8000, 1.0, {64, 16}};
  auto two = noise_scene(1, 8000);
  two.resize(2);
  EXPECT_THROW(scene_to_tensor(two, st, cfg), FeatureError);
  auto short_scene = noise_scene(1, 7999);
  EXPECT_THROW(scene_to_tensor(short_scene, st, cfg), FeatureError);
}

TEST(SceneTensor, ChannelPermutationPermutesPlanes) {
  NormStats st;
  st.stddev.fill(1.0);
  const SceneConfig cfg{8000, 1.0, {64, 16}};
  auto a = noise_scene(2, 8000);
  auto b = a;
  std::swap(b[0], b[3]);
  const auto xa = scene_to_tensor(a, st, cfg), xb = scene_to_tensor(b, st, cfg);
  const std::size_t plane = xa.dim(1) * xa.dim(2);
  for (std::size_t i = 0; i < 2 * plane; ++i) {
    EXPECT_EQ(xa[i], xb[6 * plane + i]);
    EXPECT_EQ(xa[6 * plane + i], xb[i]);
  }
}
