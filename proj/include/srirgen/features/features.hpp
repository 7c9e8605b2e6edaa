#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "srirgen/core/tensor.hpp"
#include "srirgen/dsp/fft.hpp"

namespace srirgen::features {

inline constexpr double kMagnitudeFloor = 1e-6;
inline constexpr std::size_t kPlanes = 8;

class FeatureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StftConfig {
  std::size_t window = 512;
  std::size_t hop = 128;
};

// Complex STFT, frames x bins, row-major.
struct Spectrogram {
  std::size_t frames = 0, bins = 0;
  std::vector<dsp::Complex> data;

  const dsp::Complex& at(std::size_t t, std::size_t k) const { return data[t * bins + k]; }
};

inline std::vector<double> periodic_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

inline std::size_t frame_count(std::size_t len, const StftConfig& cfg) {
  if (len < cfg.window) return 0;
  return (len - cfg.window) / cfg.hop + 1;
}

// No centering and no zero padding: frame i covers [i*hop, i*hop + window).
inline Spectrogram stft(std::span<const double> x, const StftConfig& cfg = {}) {
  if (cfg.window == 0 || cfg.hop == 0) throw FeatureError("stft: window and hop must be positive");
  if (x.size() < cfg.window) {
    throw FeatureError("stft: input of " + std::to_string(x.size()) + " samples is shorter than the window " +
                       std::to_string(cfg.window));
  }
  const auto win = periodic_hann(cfg.window);
  dsp::RealFft fft(cfg.window);
  Spectrogram s;
  s.frames = frame_count(x.size(), cfg);
  s.bins = cfg.window / 2 + 1;
  s.data.resize(s.frames * s.bins);
  std::vector<double> frame(cfg.window);
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t i = 0; i < cfg.window; ++i) frame[i] = x[t * cfg.hop + i] * win[i];
    const auto spec = fft.forward(frame);
    std::copy(spec.begin(), spec.end(), s.data.begin() + static_cast<long>(t * s.bins));
  }
  return s;
}

inline double wrap_phase(double p) {
  const double two_pi = 2.0 * std::numbers::pi;
  p = std::remainder(p, two_pi);  // [-pi, pi]
  return p <= -std::numbers::pi ? p + two_pi : p;
}

// Two planes of frames x bins: log(|X| + 1e-6), then the per-bin phase advance
// between consecutive frames divided by pi (0 for the first frame).
inline std::array<std::vector<double>, 2> logmag_if(const Spectrogram& s) {
  std::array<std::vector<double>, 2> out{std::vector<double>(s.data.size()), std::vector<double>(s.data.size())};
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t k = 0; k < s.bins; ++k) {
      const auto& z = s.at(t, k);
      out[0][t * s.bins + k] = std::log(std::abs(z) + kMagnitudeFloor);
      out[1][t * s.bins + k] =
          t == 0 ? 0.0 : wrap_phase(std::arg(z) - std::arg(s.at(t - 1, k))) / std::numbers::pi;
    }
  }
  return out;
}

struct NormStats {
  std::array<double, kPlanes> mean{};
  std::array<double, kPlanes> stddev{};
  std::string dataset_id;
};

inline nlohmann::json to_json(const NormStats& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"dataset_id", s.dataset_id}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::array<double, kPlanes>>();
  s.stddev = j.at("std").get<std::array<double, kPlanes>>();
  s.dataset_id = j.value("dataset_id", "");
  for (double v : s.stddev) {
    if (!(v > 0)) throw FeatureError("norm stats: std must be positive");
  }
  return s;
}

// 8 x frames x bins: (log-magnitude, IF) for each of the 4 channels.
inline Tensor<float> raw_features(const std::vector<std::vector<double>>& scene, std::size_t samples,
                                  const StftConfig& cfg) {
  if (scene.size() != 4) throw FeatureError("scene must have 4 channels, got " + std::to_string(scene.size()));
  std::size_t frames = 0, bins = cfg.window / 2 + 1;
  std::vector<std::array<std::vector<double>, 2>> planes;
  for (const auto& ch : scene) {
    if (ch.size() < samples) {
      throw FeatureError("scene channel has " + std::to_string(ch.size()) + " samples, need " +
                         std::to_string(samples));
    }
    const auto s = stft(std::span(ch).first(samples), cfg);
    frames = s.frames;
    planes.push_back(logmag_if(s));
  }
  Tensor<float> out({kPlanes, frames, bins});
  const std::size_t plane = frames * bins;
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t i = 0; i < plane; ++i) out[(2 * c + p) * plane + i] = static_cast<float>(planes[c][p][i]);
    }
  }
  return out;
}

// Population mean and std of each plane pooled over every frame, bin and scene.
inline NormStats dataset_stats(const std::vector<Tensor<float>>& scenes, std::string dataset_id = "") {
  if (scenes.empty()) throw FeatureError("dataset_stats: no scenes");
  NormStats st;
  st.dataset_id = std::move(dataset_id);
  std::array<double, kPlanes> sum{}, sq{};
  std::array<double, kPlanes> count{};
  for (const auto& x : scenes) {
    if (x.ndim() != 3 || x.dim(0) != kPlanes) throw FeatureError("dataset_stats: expected 8 x t x f tensors");
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t p = 0; p < kPlanes; ++p) {
      for (std::size_t i = 0; i < plane; ++i) sum[p] += x[p * plane + i];
      count[p] += static_cast<double>(plane);
    }
  }
  for (std::size_t p = 0; p < kPlanes; ++p) st.mean[p] = sum[p] / count[p];
  for (const auto& x : scenes) {
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t p = 0; p < kPlanes; ++p) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = x[p * plane + i] - st.mean[p];
        sq[p] += d * d;
      }
    }
  }
  for (std::size_t p = 0; p < kPlanes; ++p) {
    st.stddev[p] = std::sqrt(sq[p] / count[p]);
    if (!(st.stddev[p] > 1e-12 * std::max(1.0, std::abs(st.mean[p])))) {
      throw FeatureError("dataset_stats: plane " + std::to_string(p) + " has zero variance");
    }
  }
  return st;
}

inline void normalize_inplace(Tensor<float>& x, const NormStats& st) {
  const std::size_t plane = x.dim(1) * x.dim(2);
  for (std::size_t p = 0; p < kPlanes; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      x[p * plane + i] = static_cast<float>((x[p * plane + i] - st.mean[p]) / st.stddev[p]);
    }
  }
}

struct SceneConfig {
  double sample_rate = 48000;
  double seconds = 4.0;
  StftConfig stft;

  std::size_t samples() const { return static_cast<std::size_t>(std::llround(seconds * sample_rate)); }
};

// First `seconds` of the scene as a normalized 8 x t x f tensor.
inline Tensor<float> scene_to_tensor(const std::vector<std::vector<double>>& scene, const NormStats& stats,
                                     const SceneConfig& cfg) {
  auto x = raw_features(scene, cfg.samples(), cfg.stft);
  normalize_inplace(x, stats);
  return x;
}

}  // namespace srirgen::features
