#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "srirgen/core/rng.hpp"
#include "srirgen/dsp/crossover.hpp"
#include "srirgen/dsp/fft.hpp"
#include "srirgen/dsp/fractional_delay.hpp"
#include "srirgen/io/wav.hpp"
#include "srirgen/room/array.hpp"
#include "srirgen/room/image_source.hpp"

namespace srirgen::room {

using Channels = std::vector<std::vector<double>>;

struct Srir {
  Channels samples;  // 4 x L
  double sample_rate = 0;
  Vec3 source = Vec3::Zero();
  Vec3 receiver = Vec3::Zero();
  bool aligned = false;
  double toa_seconds = 0;

  std::size_t length() const { return samples.empty() ? 0 : samples[0].size(); }
};

struct SimConfig {
  double fs = 48000;
  double duration = 0.5;
  int max_order = 12;
  bool tail = true;
  std::uint64_t seed = 0;
  ImageMethod method = ImageMethod::kAuto;
};

// Indices of the octave bands whose center lies below Nyquist.
inline std::vector<std::size_t> active_bands(double fs) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < kBandCount; ++b) {
    if (kOctaveCenters[b] < fs / 2) out.push_back(b);
  }
  return out;
}

inline std::vector<double> active_centers(double fs) {
  std::vector<double> c;
  for (std::size_t b : active_bands(fs)) c.push_back(kOctaveCenters[b]);
  return c;
}

struct TailConfig {
  double fs = 48000;
  std::size_t crossover = 0;  // first sample where the tail takes over
  double match_window = 0.010;
  double crossfade = 0.005;
};

// [band][channel][sample] signals already limited to their octave band.
using BandSignals = std::vector<Channels>;

// Gaussian noise per band and channel shaped by exp(-6.91 t / RT) from the
// crossover on, band-limited by the crossover bank, and scaled so its energy
// over the first `match_window` continues the decay of the image-source band
// energy in the `match_window` before the crossover. The result is faded in
// with a sine ramp over `crossfade`.
inline Channels diffuse_tail(const BandSignals& ism, const std::vector<double>& band_rts,
                             const std::vector<double>& centers, const TailConfig& cfg,
                             std::uint64_t seed) {
  if (ism.empty() || ism[0].empty()) throw std::invalid_argument("diffuse_tail: empty input");
  if (ism.size() != band_rts.size() || ism.size() != centers.size()) {
    throw std::invalid_argument("diffuse_tail: band count mismatch");
  }
  const std::size_t channels = ism[0].size();
  const std::size_t len = ism[0][0].size();
  if (cfg.crossover >= len) throw std::invalid_argument("diffuse_tail: crossover beyond duration");
  Channels tail(channels, std::vector<double>(len, 0.0));
  const std::size_t x = cfg.crossover;
  const auto win = static_cast<std::size_t>(std::max(1.0, std::round(cfg.match_window * cfg.fs)));
  const auto fade = static_cast<std::size_t>(std::max(1.0, std::round(cfg.crossfade * cfg.fs)));
  const std::size_t pad = std::max<std::size_t>(1024, static_cast<std::size_t>(0.1 * cfg.fs));
  dsp::RealFft fft(dsp::next_pow2(len - x + 2 * pad));
  dsp::CrossoverBank bank(centers, cfg.fs, fft.size());
  for (std::size_t b = 0; b < ism.size(); ++b) {
    const double rt = band_rts[b];
    if (!(rt > 0)) throw std::invalid_argument("diffuse_tail: reverberation time must be positive");
    for (std::size_t c = 0; c < channels; ++c) {
      const auto& band = ism[b][c];
      double e_ref = 0;
      for (std::size_t n = x >= win ? x - win : 0; n < x; ++n) e_ref += band[n] * band[n];
      if (e_ref == 0) continue;
      Rng rng = Rng::derive(seed, "tail/" + std::to_string(b) + "/" + std::to_string(c));
      std::vector<double> noise(len - x + pad, 0.0);
      for (std::size_t n = 0; n < len - x; ++n) {
        const double t = static_cast<double>(n) / cfg.fs;
        noise[pad + n] = rng.normal() * std::exp(-6.91 * t / rt);
      }
      const auto shaped = bank.apply(fft, noise, b);
      const std::size_t avail = std::min(win, len - x);
      double e_tail = 0;
      for (std::size_t n = 0; n < avail; ++n) e_tail += shaped[pad + n] * shaped[pad + n];
      if (e_tail == 0) continue;
      const double window_s = static_cast<double>(x - (x >= win ? x - win : 0)) / cfg.fs;
      const double target = e_ref * static_cast<double>(avail) / static_cast<double>(win) *
                            std::exp(-13.82 * window_s / rt);
      const double gain = std::sqrt(target / e_tail);
      for (std::size_t n = 0; n < len - x; ++n) {
        const double ramp = n < fade ? std::sin(0.5 * std::numbers::pi * n / fade) : 1.0;
        tail[c][x + n] += gain * ramp * shaped[pad + n];
      }
    }
  }
  return tail;
}

// Fading weight applied to the image-source part from the crossover on.
inline double ism_fade(std::size_t n, std::size_t crossover, std::size_t fade) {
  if (n < crossover) return 1.0;
  if (n >= crossover + fade) return 0.0;
  return std::cos(0.5 * std::numbers::pi * static_cast<double>(n - crossover) / fade);
}

// Banded image-source rendering for a 4-capsule cardioid array. Each visible
// image adds band_gain * cardioid / distance at delay distance / c through the
// fractional-delay kernel; bands are recombined through the complementary
// crossover bank. With `tail`, the response after the earliest arrival of a
// max-order image is replaced by an energy-matched diffuse tail.
inline Srir simulate_srir(const RoomSpec& room, const Vec3& source, const MicArray& array,
                          const SimConfig& cfg) {
  if (!(cfg.fs > 0) || !(cfg.duration > 0)) throw std::invalid_argument("simulate: fs and duration must be positive");
  if (!room.contains(source, 1e-9)) throw GeometryError("simulate: source outside room");
  for (std::size_t i = 0; i < 4; ++i) {
    if (!room.contains(array.capsule(i), 1e-9)) {
      throw GeometryError("simulate: capsule " + std::to_string(i) + " outside room");
    }
  }
  const auto len = static_cast<std::size_t>(std::llround(cfg.duration * cfg.fs));
  const auto bands = active_bands(cfg.fs);
  const auto centers = active_centers(cfg.fs);
  const std::size_t pad = std::max<std::size_t>(1024, static_cast<std::size_t>(0.1 * cfg.fs));
  const std::size_t work = len + 2 * pad;
  const double max_distance = static_cast<double>(len + dsp::kFractionalDelayTaps) / cfg.fs * kSpeedOfSound;
  const auto images = image_sources(room, source, cfg.max_order, cfg.method, max_distance);

  BandSignals raw(bands.size(), Channels(4, std::vector<double>(work, 0.0)));
  double first_max_order = std::numeric_limits<double>::infinity();
  double direct = std::numeric_limits<double>::infinity();
  for (const auto& img : images) {
    for (std::size_t c = 0; c < 4; ++c) {
      const Vec3 cap = array.capsule(c);
      const Vec3 ray = img.position - cap;
      const double dist = ray.norm();
      const double delay = dist / kSpeedOfSound * cfg.fs;
      if (delay - dsp::kFractionalDelayTaps >= static_cast<double>(len)) continue;
      if (!visibility_test(img, cap, room)) continue;
      if (img.order == cfg.max_order) first_max_order = std::min(first_max_order, delay);
      if (img.order == 0) direct = std::min(direct, delay);
      const double base = cardioid_gain(array.looks[c], ray / dist) / dist;
      for (std::size_t k = 0; k < bands.size(); ++k) {
        dsp::add_fractional_impulse(raw[k][c], delay + static_cast<double>(pad),
                                    base * img.band_gains[bands[k]]);
      }
    }
  }

  dsp::RealFft fft(dsp::next_pow2(work));
  dsp::CrossoverBank bank(centers, cfg.fs, fft.size());
  BandSignals banded(bands.size(), Channels(4));
  for (std::size_t k = 0; k < bands.size(); ++k) {
    for (std::size_t c = 0; c < 4; ++c) {
      const auto y = bank.apply(fft, raw[k][c], k);
      banded[k][c].assign(y.begin() + static_cast<long>(pad), y.begin() + static_cast<long>(pad + len));
    }
  }

  Srir out;
  out.sample_rate = cfg.fs;
  out.source = source;
  out.receiver = array.center;
  out.toa_seconds = (source - array.center).norm() / kSpeedOfSound;
  out.samples.assign(4, std::vector<double>(len, 0.0));

  std::size_t crossover = len;
  const TailConfig tcfg{cfg.fs, 0};
  const auto fade = static_cast<std::size_t>(std::round(tcfg.crossfade * cfg.fs));
  if (cfg.tail && cfg.max_order > 0 && std::isfinite(first_max_order)) {
    const double earliest = std::max(first_max_order, direct + tcfg.match_window * cfg.fs);
    crossover = static_cast<std::size_t>(std::ceil(earliest));
  }
  if (crossover < len) {
    const BandValues rt_all = sabine_rt(room);
    std::vector<double> rts;
    for (std::size_t b : bands) rts.push_back(rt_all[b]);
    TailConfig tc = tcfg;
    tc.crossover = crossover;
    const Channels tail = diffuse_tail(banded, rts, centers, tc, Rng::derive(cfg.seed, "diffuse-tail").next());
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t n = 0; n < len; ++n) {
        double ism = 0;
        for (std::size_t k = 0; k < bands.size(); ++k) ism += banded[k][c][n];
        out.samples[c][n] = ism * ism_fade(n, crossover, fade) + tail[c][n];
      }
    }
  } else {
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t n = 0; n < len; ++n) {
        double ism = 0;
        for (std::size_t k = 0; k < bands.size(); ++k) ism += banded[k][c][n];
        out.samples[c][n] = ism;
      }
    }
  }
  return out;
}

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline nlohmann::json srir_metadata(const Srir& s) {
  return {{"sample_rate", s.sample_rate},
          {"channels", s.samples.size()},
          {"length", s.length()},
          {"source", vec_json(s.source)},
          {"receiver", vec_json(s.receiver)},
          {"aligned", s.aligned},
          {"toa_seconds", s.toa_seconds},
          {"fractional_delay", dsp::kFractionalDelayVersion}};
}

// 4-channel float WAV plus "<path>.json" sidecar.
inline void write_srir(const std::filesystem::path& path, const Srir& s,
                       const nlohmann::json& extra = nlohmann::json::object()) {
  io::Audio a{s.sample_rate, s.samples};
  io::write_wav(path, a);
  nlohmann::json meta = srir_metadata(s);
  meta.update(extra);
  io::write_file_atomic(path.string() + ".json", meta.dump(2) + "\n");
}

inline Srir read_srir(const std::filesystem::path& path) {
  io::Audio a = io::read_wav(path);
  Srir s;
  s.samples = std::move(a.channels);
  s.sample_rate = a.sample_rate;
  const std::filesystem::path side(path.string() + ".json");
  if (std::filesystem::exists(side)) {
    const auto meta = nlohmann::json::parse(io::read_file(side));
    s.source = vec3_from_json(meta.at("source"));
    s.receiver = vec3_from_json(meta.at("receiver"));
    s.aligned = meta.value("aligned", false);
    s.toa_seconds = meta.value("toa_seconds", 0.0);
  }
  return s;
}

}  // namespace srirgen::room
