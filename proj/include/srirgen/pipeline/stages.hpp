#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "srirgen/analysis/report.hpp"
#include "srirgen/dataset/build.hpp"
#include "srirgen/diffusion/train.hpp"
#include "srirgen/encoder/train.hpp"

namespace srirgen::pipeline {

using room::Vec3;

class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Scale { kDesk, kPaper };

inline Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::kDesk;
  if (s == "paper") return Scale::kPaper;
  throw std::invalid_argument("unknown scale '" + s + "' (expected desk|paper)");
}

inline const char* scale_name(Scale s) { return s == Scale::kDesk ? "desk" : "paper"; }

struct Presets {
  dataset::DatasetConfig dataset;
  features::SceneConfig features;
  encoder::EncoderConfig encoder;
  diffusion::DiffusionConfig diffusion;
};

inline Presets presets(Scale scale) {
  Presets p;
  if (scale == Scale::kDesk) {
    p.features.sample_rate = 8000;
    p.features.stft = {64, 16};
  } else {
    p.dataset.train_rooms = dataset::kPaperTrainPairs;
    p.dataset.val_rooms = dataset::kPaperValPairs;
    p.dataset.eval_rooms = 10;
    p.dataset.scene.sample_rate = 48000;
    p.dataset.scene.srir_seconds = 0.5;
    p.features.sample_rate = 48000;
    p.encoder = encoder::EncoderConfig::paper();
    p.diffusion.unet.depth = 6;
    p.diffusion.unet.base_channels = 64;
    p.diffusion.sample_rate = 48000;
    p.diffusion.length = 24000;
    p.diffusion.h_dim = p.encoder.h_dim();
  }
  p.features.seconds = p.dataset.scene.scene_seconds;
  return p;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string digest(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }

inline std::string digest(const std::vector<float>& v) {
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float))));
}

// ---- encoder inputs ---------------------------------------------------------

inline Tensor<float> raw_scene(const std::filesystem::path& file, const features::SceneConfig& sc) {
  const io::Audio a = io::read_wav(file);
  if (a.sample_rate != sc.sample_rate) {
    throw StageError(file.string() + ": sample rate " + dataset::fmt_number(a.sample_rate) + " Hz, expected " +
                     dataset::fmt_number(sc.sample_rate));
  }
  return features::raw_features(a.channels, sc.samples(), sc.stft);
}

struct SceneSet {
  std::vector<std::string> room_ids;
  std::vector<std::array<Tensor<float>, 2>> raw;  // un-normalized features per scene
};

inline SceneSet load_scenes(const dataset::Manifest& m, const std::string& split, const features::SceneConfig& sc) {
  SceneSet out;
  for (const auto* row : m.split(split)) {
    out.room_ids.push_back(row->room_id);
    out.raw.push_back({raw_scene(m.root / row->scenes[0].file, sc), raw_scene(m.root / row->scenes[1].file, sc)});
  }
  return out;
}

inline features::NormStats scene_stats(const SceneSet& s, const std::string& id) {
  std::vector<Tensor<float>> all;
  for (const auto& p : s.raw) {
    all.push_back(p[0]);
    all.push_back(p[1]);
  }
  return features::dataset_stats(all, id);
}

inline std::vector<encoder::ScenePair> scene_pairs(const SceneSet& s, const features::NormStats& st) {
  std::vector<encoder::ScenePair> out;
  for (std::size_t i = 0; i < s.raw.size(); ++i) {
    encoder::ScenePair p{s.room_ids[i], s.raw[i][0], s.raw[i][1]};
    features::normalize_inplace(p.a, st);
    features::normalize_inplace(p.b, st);
    out.push_back(std::move(p));
  }
  return out;
}

// ---- generator inputs -------------------------------------------------------

inline Tensor<float> srir_tensor(const room::Srir& s, std::size_t length) {
  if (s.samples.size() != 4) throw StageError("SRIR must have 4 channels");
  Tensor<float> x({4, length});
  for (std::size_t c = 0; c < 4; ++c) {
    const std::size_t n = std::min(length, s.samples[c].size());
    for (std::size_t i = 0; i < n; ++i) x[c * length + i] = static_cast<float>(s.samples[c][i]);
  }
  return x;
}

// Every SRIR of the split's scenes as a training target. h is drawn from the
// room's two scene embeddings.
inline std::vector<diffusion::SrirItem> generator_items(const dataset::Manifest& m, const std::string& split,
                                                        encoder::LoadedEncoder& enc,
                                                        const diffusion::DiffusionConfig& cfg) {
  const bool align = diffusion::variant_aligned(cfg.variant);
  std::vector<diffusion::SrirItem> out;
  for (const auto* row : m.split(split)) {
    std::vector<Tensor<float>> scenes;
    for (const auto& sc : row->scenes) {
      auto x = raw_scene(m.root / sc.file, enc.scene);
      features::normalize_inplace(x, enc.stats);
      scenes.push_back(std::move(x));
    }
    const auto h = encoder::embed_scenes(*enc.model, scenes);
    for (const auto& sc : row->scenes) {
      for (const auto& f : sc.srir_files) {
        const room::Srir s = dataset::normalize_align(room::read_srir(m.root / f), align);
        if (s.sample_rate != cfg.sample_rate) {
          throw StageError(f + ": sample rate " + dataset::fmt_number(s.sample_rate) + " Hz, generator expects " +
                           dataset::fmt_number(cfg.sample_rate));
        }
        out.push_back({row->room_id, h, diffusion::conditioning_vector(s.source, s.receiver),
                       srir_tensor(s, cfg.length)});
      }
    }
  }
  return out;
}

// ---- inference --------------------------------------------------------------

inline std::vector<float> embed_scene_file(encoder::LoadedEncoder& enc, const std::filesystem::path& file) {
  auto x = raw_scene(file, enc.scene);
  features::normalize_inplace(x, enc.stats);
  return encoder::embed_scenes(*enc.model, {x}).front();
}

inline room::Srir generated_srir(const Tensor<float>& y, std::size_t index, const diffusion::DiffusionConfig& cfg,
                                 const Vec3& source, const Vec3& receiver) {
  room::Srir s;
  s.sample_rate = cfg.sample_rate;
  s.source = source;
  s.receiver = receiver;
  s.aligned = diffusion::variant_aligned(cfg.variant);
  s.samples.assign(cfg.channels, std::vector<double>(cfg.length));
  const float* p = y.data() + index * cfg.channels * cfg.length;
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    for (std::size_t i = 0; i < cfg.length; ++i) s.samples[c][i] = p[c * cfg.length + i];
  }
  return s;
}

// ---- evaluation -------------------------------------------------------------

struct PairedRows {
  std::vector<std::string> names;
  std::vector<analysis::AcousticRow> pred, truth;
};

// Analyzes every WAV in `truth` against the same-named file in `pred`. The
// array center comes from the truth sidecar (the origin when absent).
inline PairedRows analyze_dirs(const std::filesystem::path& pred, const std::filesystem::path& truth) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(truth)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw StageError(truth.string() + ": no .wav files");
  PairedRows out;
  for (const auto& t : files) {
    auto rel = std::filesystem::relative(t, truth);
    const auto p = pred / rel;
    if (!std::filesystem::exists(p)) throw StageError(p.string() + ": missing prediction for " + rel.string());
    const room::Srir ts = room::read_srir(t), ps = room::read_srir(p);
    const auto arr = room::array_geometry(ts.receiver);
    auto tr = analysis::analyze_srir(ts.samples, ts.sample_rate, arr);
    auto pr = analysis::analyze_srir(ps.samples, ps.sample_rate, arr);
    const std::string stem = std::filesystem::path(rel).replace_extension().generic_string();
    const auto cut = stem.find('/');
    tr.room_id = pr.room_id = cut == std::string::npos ? "" : stem.substr(0, cut);
    tr.position_id = pr.position_id = cut == std::string::npos ? stem : stem.substr(cut + 1);
    out.names.push_back(stem);
    out.truth.push_back(std::move(tr));
    out.pred.push_back(std::move(pr));
  }
  return out;
}

// ---- plot data --------------------------------------------------------------

inline std::string rt_scatter(const PairedRows& r) {
  std::ostringstream os;
  os << "# name truth_mid_rt_s predicted_mid_rt_s\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    os << r.names[i] << ' ' << analysis::detail::fmt(r.truth[i].mid_rt) << ' ' << analysis::detail::fmt(r.pred[i].mid_rt) << '\n';
  }
  return os.str();
}

inline std::string drr_curves(const PairedRows& r) {
  std::ostringstream os;
  os << "# room position truth_drr_db predicted_drr_db\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    os << (r.truth[i].room_id.empty() ? "-" : r.truth[i].room_id) << ' ' << r.truth[i].position_id << ' '
       << analysis::detail::fmt(r.truth[i].drr_db) << ' ' << analysis::detail::fmt(r.pred[i].drr_db) << '\n';
  }
  return os.str();
}

inline std::string doa_arrows(const PairedRows& r, const std::vector<Vec3>& receivers) {
  std::ostringstream os;
  os << "# x y z truth_dx truth_dy truth_dz pred_dx pred_dy pred_dz\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const Vec3& p = receivers.at(i);
    const Vec3 &t = r.truth[i].doa, &g = r.pred[i].doa;
    os << analysis::detail::fmt(p.x()) << ' ' << analysis::detail::fmt(p.y()) << ' ' << analysis::detail::fmt(p.z()) << ' '
       << analysis::detail::fmt(t.x()) << ' ' << analysis::detail::fmt(t.y()) << ' ' << analysis::detail::fmt(t.z()) << ' '
       << analysis::detail::fmt(g.x()) << ' ' << analysis::detail::fmt(g.y()) << ' ' << analysis::detail::fmt(g.z()) << '\n';
  }
  return os.str();
}

}  // namespace srirgen::pipeline
