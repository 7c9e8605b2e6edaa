#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "srirgen/dataset/pipeline.hpp"

namespace srirgen::dataset {

struct DatasetConfig {
  std::size_t train_rooms = 16;
  std::size_t val_rooms = 4;
  std::size_t eval_rooms = 2;
  std::uint64_t seed = 0;
  SceneConfig scene;
  double perturbation = 0.02;
  int max_tries = 200;
  std::filesystem::path corpus_dir;    // empty: synthetic corpus
  std::filesystem::path profile_file;  // empty: synthetic RT family
  std::size_t synthetic_corpus_size = 12;
  std::size_t line_count = 15;
  double line_distance = 1.0;
  double line_span = 6.0;
};

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"train_rooms", c.train_rooms},
          {"val_rooms", c.val_rooms},
          {"eval_rooms", c.eval_rooms},
          {"seed", c.seed},
          {"sample_rate", c.scene.sample_rate},
          {"scene_seconds", c.scene.scene_seconds},
          {"srir_seconds", c.scene.srir_seconds},
          {"max_order", c.scene.max_order},
          {"max_sources", c.scene.max_sources},
          {"perturbation", c.perturbation},
          {"max_tries", c.max_tries},
          {"corpus_dir", c.corpus_dir.string()},
          {"profile_file", c.profile_file.string()},
          {"synthetic_corpus_size", c.synthetic_corpus_size},
          {"line_count", c.line_count},
          {"line_distance", c.line_distance},
          {"line_span", c.line_span},
          {"paper_scale_reference", {{"train_pairs", kPaperTrainPairs}, {"val_pairs", kPaperValPairs}}}};
}

struct SceneRecord {
  std::string file;
  std::vector<std::string> srir_files;
  std::vector<Vec3> sources;
  Vec3 receiver = Vec3::Zero();
};

struct ManifestRow {
  std::string room_id;
  std::string split;  // train | val | eval
  std::string room_file;
  std::array<SceneRecord, 2> scenes;
  std::uint64_t seed = 0;
};

struct LineRecord {
  std::string room_id;
  std::size_t index = 0;
  std::string srir_file;
  Vec3 source = Vec3::Zero();
  Vec3 receiver = Vec3::Zero();
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRow> rows;
  std::vector<LineRecord> lines;

  std::vector<const ManifestRow*> split(const std::string& name) const {
    std::vector<const ManifestRow*> out;
    for (const auto& r : rows) {
      if (r.split == name) out.push_back(&r);
    }
    return out;
  }
};

inline std::string fmt_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string fmt_point(const Vec3& p) {
  return fmt_number(p.x()) + " " + fmt_number(p.y()) + " " + fmt_number(p.z());
}

inline Vec3 parse_point(const std::string& s) {
  std::istringstream in(s);
  double x, y, z;
  if (!(in >> x >> y >> z)) throw DatasetError("manifest: bad point '" + s + "'");
  return {x, y, z};
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, char sep, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(sep);
    out += f(v[i]);
  }
  return out;
}

inline constexpr const char* kManifestHeader =
    "room_id,split,room_file,scene_a,scene_b,srir_files,source_positions,receiver_position,seed";
inline constexpr const char* kLinesHeader = "room_id,index,srir_file,source,receiver";

// Per-scene lists are separated by '|', items within a scene by ';', and
// point coordinates by spaces.
inline std::string manifest_csv(const Manifest& m) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& r : m.rows) {
    const auto& a = r.scenes[0];
    const auto& b = r.scenes[1];
    auto files = [](const SceneRecord& s) { return join(s.srir_files, ';', [](const auto& f) { return f; }); };
    auto points = [](const SceneRecord& s) { return join(s.sources, ';', fmt_point); };
    os << r.room_id << ',' << r.split << ',' << r.room_file << ',' << a.file << ',' << b.file << ',' << files(a)
       << '|' << files(b) << ',' << points(a) << '|' << points(b) << ',' << fmt_point(a.receiver) << '|'
       << fmt_point(b.receiver) << ',' << r.seed << '\n';
  }
  return os.str();
}

inline std::string lines_csv(const Manifest& m) {
  std::ostringstream os;
  os << kLinesHeader << '\n';
  for (const auto& l : m.lines) {
    os << l.room_id << ',' << l.index << ',' << l.srir_file << ',' << fmt_point(l.source) << ','
       << fmt_point(l.receiver) << '\n';
  }
  return os.str();
}

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path, const char* header) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw DatasetError(path.string() + ":1: expected header '" + std::string(header) + "'");
  }
  std::vector<std::vector<std::string>> rows;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    rows.push_back(split_on(line, ','));
    if (rows.back().size() != split_on(header, ',').size()) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    }
  }
  return rows;
}

// Reads manifest.csv (and eval_lines.csv when present) and checks that every
// referenced file exists and that splits are room-disjoint.
inline Manifest read_manifest(const std::filesystem::path& root) {
  Manifest m;
  m.root = root;
  for (const auto& c : read_csv_rows(root / "manifest.csv", kManifestHeader)) {
    ManifestRow r;
    r.room_id = c[0];
    r.split = c[1];
    r.room_file = c[2];
    r.scenes[0].file = c[3];
    r.scenes[1].file = c[4];
    const auto files = split_on(c[5], '|'), pts = split_on(c[6], '|'), recv = split_on(c[7], '|');
    if (files.size() != 2 || pts.size() != 2 || recv.size() != 2) {
      throw DatasetError("manifest: room " + r.room_id + " does not list two scenes");
    }
    for (int s = 0; s < 2; ++s) {
      r.scenes[s].srir_files = split_on(files[s], ';');
      for (const auto& p : split_on(pts[s], ';')) r.scenes[s].sources.push_back(parse_point(p));
      r.scenes[s].receiver = parse_point(recv[s]);
    }
    r.seed = std::stoull(c[8]);
    m.rows.push_back(std::move(r));
  }
  if (std::filesystem::exists(root / "eval_lines.csv")) {
    for (const auto& c : read_csv_rows(root / "eval_lines.csv", kLinesHeader)) {
      m.lines.push_back({c[0], std::stoul(c[1]), c[2], parse_point(c[3]), parse_point(c[4])});
    }
  }
  std::map<std::string, std::string> split_of;
  auto require = [&](const std::string& rel) {
    if (!std::filesystem::exists(root / rel)) throw DatasetError("manifest: missing file " + (root / rel).string());
  };
  for (const auto& r : m.rows) {
    auto [it, fresh] = split_of.emplace(r.room_id, r.split);
    if (!fresh) throw DatasetError("manifest: room " + r.room_id + " listed twice");
    require(r.room_file);
    for (const auto& s : r.scenes) {
      require(s.file);
      for (const auto& f : s.srir_files) require(f);
    }
  }
  for (const auto& l : m.lines) require(l.srir_file);
  return m;
}

inline std::string split_for(std::size_t index, const DatasetConfig& c) {
  if (index < c.train_rooms) return "train";
  if (index < c.train_rooms + c.val_rooms) return "val";
  return "eval";
}

inline std::string room_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "room_%04zu", index);
  return buf;
}

// Generates every room from its own seeded stream, writes audio, room
// specs, manifest.csv, eval_lines.csv and dataset.json under `root`.
inline Manifest build_dataset(const std::filesystem::path& root, const DatasetConfig& cfg,
                              const std::function<void(const std::string&)>& log = {}) {
  const std::size_t total = cfg.train_rooms + cfg.val_rooms + cfg.eval_rooms;
  if (total == 0) throw std::invalid_argument("build_dataset: no rooms requested");
  std::vector<RtProfile> profiles;
  if (!cfg.profile_file.empty()) profiles = parse_profile_csv(io::read_file(cfg.profile_file), cfg.profile_file.string());
  const Corpus corpus =
      cfg.corpus_dir.empty()
          ? synthetic_corpus(cfg.synthetic_corpus_size, cfg.scene.sample_rate, cfg.scene.scene_seconds,
                             Rng::derive(cfg.seed, "dataset/corpus").next())
          : load_corpus(cfg.corpus_dir, cfg.scene.sample_rate, cfg.scene.scene_seconds);
  for (const char* d : {"rooms", "scenes", "srirs", "eval"}) std::filesystem::create_directories(root / d);

  Manifest m;
  m.root = root;
  for (std::size_t i = 0; i < total; ++i) {
    const std::string id = room_name(i);
    const std::uint64_t room_seed = Rng::derive(cfg.seed, "dataset/" + id).next();
    Rng rng(room_seed);
    const RtProfile profile = draw_rt_profile(profiles, rng);
    const RoomDraw drawn = draw_room(profile, rng, cfg.max_tries, cfg.perturbation);
    const ScenePair pair = render_scene_pair(id, drawn.room, corpus, rng, cfg.scene);

    ManifestRow row;
    row.room_id = id;
    row.split = split_for(i, cfg);
    row.room_file = "rooms/" + id + ".json";
    row.seed = room_seed;
    nlohmann::json room_json = room::to_json(drawn.room);
    room_json["room_id"] = id;
    room_json["rt_profile"] = {{"t60", profile.t60}, {"provenance", profile.provenance}};
    room_json["alpha"] = drawn.alpha;
    room_json["draw_tries"] = drawn.tries;
    io::write_file_atomic(root / row.room_file, room_json.dump(2) + "\n");
    for (int s = 0; s < 2; ++s) {
      const Scene& scene = pair.scenes[s];
      const std::string tag = id + (s == 0 ? "_a" : "_b");
      SceneRecord& rec = row.scenes[s];
      rec.file = "scenes/" + tag + ".wav";
      rec.receiver = scene.receiver;
      rec.sources = scene.sources;
      io::write_wav(root / rec.file, io::Audio{cfg.scene.sample_rate, scene.audio});
      nlohmann::json side = {{"room_id", id},
                             {"receiver", room::vec_json(scene.receiver)},
                             {"signals", scene.signals},
                             {"gain", scene.gain}};
      for (const auto& p : scene.sources) side["sources"].push_back(room::vec_json(p));
      io::write_file_atomic(root / (rec.file + ".json"), side.dump(2) + "\n");
      for (std::size_t k = 0; k < scene.srirs.size(); ++k) {
        const std::string f = "srirs/" + tag + "_s" + std::to_string(k) + ".wav";
        room::write_srir(root / f, scene.srirs[k], {{"room_id", id}});
        rec.srir_files.push_back(f);
      }
    }
    if (row.split == "eval") {
      const Vec3 source = random_interior(drawn.room, rng);
      const LinePositions line =
          line_positions(source, drawn.room, cfg.line_count, cfg.line_distance, cfg.line_span);
      if (line.clipped && log) log(id + ": evaluation line clipped to " + fmt_number(line.span) + " m");
      std::filesystem::create_directories(root / "eval" / id);
      for (std::size_t k = 0; k < line.receivers.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "line_%02zu.wav", k);
        const std::string f = "eval/" + id + "/" + name;
        const auto srir = room::simulate_srir(drawn.room, source, room::array_geometry(line.receivers[k]),
                                              cfg.scene.sim(rng.next()));
        room::write_srir(root / f, srir, {{"room_id", id}, {"line_index", k}});
        m.lines.push_back({id, k, f, source, line.receivers[k]});
      }
    }
    if (log) log(id + " (" + row.split + "): " + profile_string(profile));
    m.rows.push_back(std::move(row));
  }
  io::write_file_atomic(root / "manifest.csv", manifest_csv(m));
  io::write_file_atomic(root / "eval_lines.csv", lines_csv(m));
  io::write_file_atomic(root / "dataset.json", to_json(cfg).dump(2) + "\n");
  return m;
}

}  // namespace srirgen::dataset
