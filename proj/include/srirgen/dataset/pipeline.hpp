#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "srirgen/core/rng.hpp"
#include "srirgen/dsp/fft.hpp"
#include "srirgen/io/atomic.hpp"
#include "srirgen/io/wav.hpp"
#include "srirgen/room/array.hpp"
#include "srirgen/room/geometry.hpp"
#include "srirgen/room/simulate.hpp"

namespace srirgen::dataset {

using room::BandValues;
using room::Vec3;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kWallMargin = 0.3;
inline constexpr double kScenePeak = 0.9;
inline constexpr std::size_t kPaperTrainPairs = 45000;
inline constexpr std::size_t kPaperValPairs = 2500;

struct RtProfile {
  BandValues t60{};
  std::string provenance;
};

// Rows of per-band T60. The header names the band centers, e.g.
// "125,250,500,1000,2000,4000"; blank lines and '#' comments are skipped.
inline std::vector<RtProfile> parse_profile_csv(const std::string& text, const std::string& origin = "profiles") {
  std::istringstream in(text);
  std::string line;
  std::vector<RtProfile> rows;
  bool header = false;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    auto fail = [&](const std::string& why) {
      throw DatasetError(origin + ":" + std::to_string(lineno) + ": " + why);
    };
    if (cells.size() != room::kBandCount) fail("expected 6 columns, got " + std::to_string(cells.size()));
    if (!header) {
      for (std::size_t b = 0; b < room::kBandCount; ++b) {
        double f = 0;
        try {
          f = std::stod(cells[b]);
        } catch (const std::exception&) {
          fail("header must name band centers, got '" + cells[b] + "'");
        }
        if (std::abs(f - room::kOctaveCenters[b]) > 1e-9) fail("header column " + std::to_string(b + 1) + " is " +
                                                               cells[b] + ", expected " +
                                                               std::to_string(static_cast<int>(room::kOctaveCenters[b])));
      }
      header = true;
      continue;
    }
    RtProfile p;
    p.provenance = origin + ":" + std::to_string(lineno);
    for (std::size_t b = 0; b < room::kBandCount; ++b) {
      std::size_t used = 0;
      try {
        p.t60[b] = std::stod(cells[b], &used);
      } catch (const std::exception&) {
        fail("malformed value '" + cells[b] + "'");
      }
      if (used != cells[b].size() && cells[b].find_first_not_of(" \t", used) != std::string::npos) {
        fail("malformed value '" + cells[b] + "'");
      }
      if (!(p.t60[b] > 0.05)) fail("T60 must exceed 0.05 s, got " + cells[b]);
    }
    rows.push_back(p);
  }
  if (rows.empty()) throw DatasetError(origin + ": no profile rows");
  return rows;
}

// Built-in family T60(f) = t_mid * (f / 1000)^gamma.
inline RtProfile synthetic_profile(double t_mid, double gamma) {
  RtProfile p;
  for (std::size_t b = 0; b < room::kBandCount; ++b) p.t60[b] = t_mid * std::pow(room::kOctaveCenters[b] / 1000.0, gamma);
  std::ostringstream os;
  os.precision(6);
  os << "synthetic(t_mid=" << t_mid << ",gamma=" << gamma << ")";
  p.provenance = os.str();
  return p;
}

// Uniform draw from `rows`, or from the synthetic family when empty.
inline RtProfile draw_rt_profile(const std::vector<RtProfile>& rows, Rng& rng) {
  if (!rows.empty()) return rows[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(rows.size()) - 1))];
  const double t_mid = rng.uniform(0.2, 1.5);
  const double gamma = rng.uniform(-0.35, 0.0);
  return synthetic_profile(t_mid, gamma);
}

inline std::string profile_string(const RtProfile& p) {
  std::ostringstream os;
  os.precision(4);
  os << p.provenance << " [";
  for (std::size_t b = 0; b < room::kBandCount; ++b) os << (b ? ", " : "") << p.t60[b];
  os << "] s";
  return os.str();
}

struct RoomDraw {
  room::RoomSpec room;
  BandValues alpha{};
  int tries = 0;
};

struct RoomBounds {
  double xy_min = 1.5, xy_max = 20.0;
  double z_min = 2.5, z_max = 8.0;
};

// Rejection-samples room sizes until Sabine absorption reaching the profile
// is feasible.
inline RoomDraw draw_room(const RtProfile& profile, Rng& rng, int max_tries = 100, double perturbation = 0.02,
                          const RoomBounds& bounds = {}) {
  if (max_tries < 1) throw std::invalid_argument("draw_room: max_tries must be >= 1");
  for (int t = 1; t <= max_tries; ++t) {
    const Vec3 dims(rng.uniform(bounds.xy_min, bounds.xy_max), rng.uniform(bounds.xy_min, bounds.xy_max),
                    rng.uniform(bounds.z_min, bounds.z_max));
    room::RoomSpec r = room::make_room(dims, perturbation, rng.next());
    if (const auto alpha = room::sabine_absorption(profile.t60, r)) {
      room::set_uniform_absorption(r, *alpha);
      return {r, *alpha, t};
    }
  }
  throw DatasetError("draw_room: no feasible room in " + std::to_string(max_tries) + " tries for profile " +
                     profile_string(profile));
}

// Axis-aligned bounding box of the room's vertices.
inline std::pair<Vec3, Vec3> room_bounds(const room::RoomSpec& r) {
  Vec3 lo = r.vertices[0], hi = r.vertices[0];
  for (const auto& v : r.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return {lo, hi};
}

// Uniform point inside the room at least `margin` from every wall.
inline Vec3 random_interior(const room::RoomSpec& r, Rng& rng, double margin = kWallMargin) {
  const auto [lo, hi] = room_bounds(r);
  for (int t = 0; t < 10000; ++t) {
    const Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    if (r.contains(p, margin)) return p;
  }
  throw DatasetError("random_interior: room has no interior point " + std::to_string(margin) + " m from the walls");
}

// Mono signal source for scene rendering.
struct Corpus {
  double sample_rate = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> signals;
};

// Every *.wav in `dir` (first channel), sorted by name. Files must be at the
// working rate and at least `seconds` long.
inline Corpus load_corpus(const std::filesystem::path& dir, double sample_rate, double seconds = 4.0) {
  if (!std::filesystem::is_directory(dir)) throw DatasetError("corpus: " + dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Corpus c{sample_rate, {}, {}};
  const auto need = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  for (const auto& f : files) {
    io::Audio a = io::read_wav(f);
    if (a.sample_rate != sample_rate) {
      throw DatasetError("corpus: " + f.string() + " is at " + std::to_string(a.sample_rate) + " Hz, expected " +
                         std::to_string(sample_rate));
    }
    if (a.length() < need) continue;
    c.names.push_back(f.filename().string());
    c.signals.push_back(std::move(a.channels[0]));
  }
  if (c.signals.size() < 3) {
    throw DatasetError("corpus: " + dir.string() + " has " + std::to_string(c.signals.size()) +
                       " usable files; need at least 3 mono WAVs of >= " + std::to_string(seconds) + " s");
  }
  return c;
}

// Self-contained stand-in for a speech/music corpus: bursts of band-limited
// noise and decaying tones separated by silences, so decays are audible.
inline Corpus synthetic_corpus(std::size_t count, double sample_rate, double seconds, std::uint64_t seed) {
  Corpus c{sample_rate, {}, {}};
  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng = Rng::derive(seed, "corpus/" + std::to_string(k));
    std::vector<double> x(n, 0.0);
    std::size_t pos = static_cast<std::size_t>(rng.uniform(0.0, 0.2) * sample_rate);
    while (pos < n) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.05, 0.4) * sample_rate);
      const bool tone = rng.uniform() < 0.4;
      const double f0 = std::exp(rng.uniform(std::log(100.0), std::log(0.4 * sample_rate)));
      const double amp = rng.uniform(0.3, 1.0);
      double lp = 0;
      const double a = rng.uniform(0.05, 0.9);
      for (std::size_t i = 0; i < len && pos + i < n; ++i) {
        const double env = std::exp(-3.0 * static_cast<double>(i) / len);
        double s;
        if (tone) {
          s = std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(i) / sample_rate);
        } else {
          lp = a * lp + (1.0 - a) * rng.normal();
          s = lp * 2.0;
        }
        x[pos + i] += amp * env * s;
      }
      pos += len + static_cast<std::size_t>(rng.uniform(0.1, 0.6) * sample_rate);
    }
    c.names.push_back("synthetic_" + std::to_string(k));
    c.signals.push_back(std::move(x));
  }
  return c;
}

struct SceneConfig {
  double sample_rate = 8000;
  double scene_seconds = 4.0;
  double srir_seconds = 0.25;
  int max_order = 12;
  std::size_t max_sources = 3;

  std::size_t scene_samples() const { return static_cast<std::size_t>(std::llround(scene_seconds * sample_rate)); }
  room::SimConfig sim(std::uint64_t seed) const {
    room::SimConfig s;
    s.fs = sample_rate;
    s.duration = srir_seconds;
    s.max_order = max_order;
    s.seed = seed;
    return s;
  }
};

struct Scene {
  room::Channels audio;  // 4 x scene_samples, peak-normalized
  Vec3 receiver = Vec3::Zero();
  std::vector<Vec3> sources;
  std::vector<std::string> signals;  // corpus names
  std::vector<room::Srir> srirs;
  double gain = 1.0;  // applied by peak normalization
};

// Sum over sources of the SRIR convolved with the signal's first
// scene_seconds, truncated to scene_seconds. Not normalized.
inline room::Channels mix_sources(const std::vector<room::Srir>& srirs,
                                  const std::vector<const std::vector<double>*>& signals, std::size_t length) {
  room::Channels out(4, std::vector<double>(length, 0.0));
  for (std::size_t s = 0; s < srirs.size(); ++s) {
    const std::span<const double> sig(signals[s]->data(), std::min(length, signals[s]->size()));
    for (std::size_t c = 0; c < 4; ++c) {
      const auto y = dsp::fft_convolve(sig, srirs[s].samples[c], length);
      for (std::size_t i = 0; i < length; ++i) out[c][i] += y[i];
    }
  }
  return out;
}

inline double peak_normalize(room::Channels& x, double peak = kScenePeak) {
  double m = 0;
  for (const auto& ch : x) {
    for (double v : ch) m = std::max(m, std::abs(v));
  }
  if (!(m > 0)) throw DatasetError("scene is silent");
  const double g = peak / m;
  for (auto& ch : x) {
    for (double& v : ch) v *= g;
  }
  return g;
}

inline Scene render_scene(const room::RoomSpec& r, const Corpus& corpus, Rng& rng, const SceneConfig& cfg) {
  if (corpus.signals.size() < cfg.max_sources) {
    throw DatasetError("render_scene: corpus has " + std::to_string(corpus.signals.size()) + " signals, need " +
                       std::to_string(cfg.max_sources));
  }
  if (corpus.sample_rate != cfg.sample_rate) throw DatasetError("render_scene: corpus rate differs from scene rate");
  Scene s;
  const auto count = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(cfg.max_sources)));
  s.receiver = random_interior(r, rng);
  std::vector<std::size_t> pool(corpus.signals.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng.engine());
  std::vector<const std::vector<double>*> sig;
  const auto array = room::array_geometry(s.receiver);
  for (std::size_t k = 0; k < count; ++k) {
    s.sources.push_back(random_interior(r, rng));
    s.signals.push_back(corpus.names[pool[k]]);
    sig.push_back(&corpus.signals[pool[k]]);
    s.srirs.push_back(room::simulate_srir(r, s.sources.back(), array, cfg.sim(rng.next())));
  }
  s.audio = mix_sources(s.srirs, sig, cfg.scene_samples());
  s.gain = peak_normalize(s.audio);
  return s;
}

struct ScenePair {
  std::string room_id;
  room::RoomSpec room;
  std::array<Scene, 2> scenes;
};

inline ScenePair render_scene_pair(const std::string& room_id, const room::RoomSpec& r, const Corpus& corpus, Rng& rng,
                                   const SceneConfig& cfg) {
  ScenePair p{room_id, r, {}};
  p.scenes[0] = render_scene(r, corpus, rng, cfg);
  p.scenes[1] = render_scene(r, corpus, rng, cfg);
  return p;
}

// Samples kept ahead of the direct sound when aligning: the fractional-delay
// kernel's lead-in, which also covers capsules hit before the array center.
inline constexpr long kAlignLead = dsp::kFractionalDelayTaps / 2;

// Divides by the peak magnitude over all channels and, when `align` is set,
// moves the direct sound of the array center to sample kAlignLead with zero
// fill. A response already marked aligned is not shifted again.
inline room::Srir normalize_align(room::Srir s, bool align) {
  double m = 0;
  for (const auto& ch : s.samples) {
    for (double v : ch) m = std::max(m, std::abs(v));
  }
  if (!(m > 0)) throw DatasetError("normalize_align: silent SRIR");
  for (auto& ch : s.samples) {
    for (double& v : ch) v /= m;
  }
  if (align && !s.aligned) {
    const long shift = std::lround(s.toa_seconds * s.sample_rate) - kAlignLead;  // > 0 moves earlier
    for (auto& ch : s.samples) {
      const long len = static_cast<long>(ch.size());
      std::vector<double> out(ch.size(), 0.0);
      for (long i = std::max(0L, -shift); i < len && i + shift < len; ++i) out[i] = ch[i + shift];
      ch = std::move(out);
    }
    s.aligned = true;
  }
  return s;
}

struct LinePositions {
  std::vector<Vec3> receivers;
  Vec3 closest = Vec3::Zero();  // point on the line nearest the source
  Vec3 direction = Vec3::UnitX();
  double span = 0;
  bool clipped = false;
};

// `count` equidistant receivers on a horizontal segment at the source height
// whose closest point lies `distance` from the source. Eight horizontal
// orientations are tried and the one admitting the longest span (up to
// `span`) wins; spans shorter than `min_span` are an error.
inline LinePositions line_positions(const Vec3& source, const room::RoomSpec& r, std::size_t count = 15,
                                    double distance = 1.0, double span = 6.0, double min_span = 3.0,
                                    double margin = kWallMargin) {
  if (count < 2) throw std::invalid_argument("line_positions: count must be >= 2");
  LinePositions best;
  double best_span = -1;
  for (int k = 0; k < 8; ++k) {
    const double a = k * std::numbers::pi / 4.0;
    const Vec3 offset(std::cos(a), std::sin(a), 0.0), dir(-std::sin(a), std::cos(a), 0.0);
    const Vec3 c = source + distance * offset;
    if (!r.contains(c, margin)) continue;
    // Largest half-length that keeps both ends inside (bisection on the
    // convex room).
    double lo = 0, hi = span / 2;
    if (r.contains(c + hi * dir, margin) && r.contains(c - hi * dir, margin)) {
      lo = hi;
    } else {
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (r.contains(c + mid * dir, margin) && r.contains(c - mid * dir, margin)) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
    }
    if (2 * lo > best_span + 1e-12) {
      best_span = 2 * lo;
      best.closest = c;
      best.direction = dir;
    }
  }
  if (best_span < min_span) {
    throw DatasetError("line_positions: longest line through the room is " + std::to_string(std::max(0.0, best_span)) +
                       " m, below the minimum " + std::to_string(min_span) + " m");
  }
  best.span = std::min(best_span, span);
  best.clipped = best.span < span - 1e-9;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = -best.span / 2 + best.span * static_cast<double>(i) / static_cast<double>(count - 1);
    best.receivers.push_back(best.closest + t * best.direction);
  }
  return best;
}

}  // namespace srirgen::dataset
