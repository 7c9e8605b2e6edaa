#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "srirgen/dataset/build.hpp"

using namespace srirgen;
using namespace srirgen::dataset;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("srirgen_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

room::Srir impulse_srir(std::size_t len, std::size_t at, double amp, double fs = 48000) {
  room::Srir s;
  s.sample_rate = fs;
  s.samples.assign(4, std::vector<double>(len, 0.0));
  for (std::size_t c = 0; c < 4; ++c) {
    s.samples[c][at] = amp * (1.0 - 0.1 * c);
    s.samples[c][at + 10] = 0.1 * amp;
  }
  s.toa_seconds = at / fs;
  return s;
}

}  // namespace

TEST(Profiles, SingleRowAlwaysDrawn) {
  const auto rows = parse_profile_csv("125,250,500,1000,2000,4000\n0.9,0.8,0.7,0.6,0.5,0.4\n");
  Rng rng(1);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(draw_rt_profile(rows, rng).t60[3], 0.6);
}

TEST(Profiles, MalformedRowNamesLine) {
  try {
    parse_profile_csv("125,250,500,1000,2000,4000\n0.9,0.8,0.7,0.6,0.5,0.4\n# note\n0.9,x,0.7,0.6,0.5,0.4\n", "p.csv");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("p.csv:4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_profile_csv("125,250,500,1000,2000\n"), DatasetError);
  EXPECT_THROW(parse_profile_csv("125,250,500,1000,2000,4000\n"), DatasetError);
  EXPECT_THROW(parse_profile_csv("125,250,500,1000,2000,4000\n0.9,0.8,0.7,0.6,0.5,0.01\n"), DatasetError);
}

TEST(Profiles, SyntheticFamily) {
  const auto flat = synthetic_profile(0.7, 0.0);
  for (double t : flat.t60) EXPECT_DOUBLE_EQ(t, 0.7);
  EXPECT_NEAR(synthetic_profile(1.0, -0.35).t60[5], std::pow(4.0, -0.35), 1e-12);
  EXPECT_NEAR(synthetic_profile(1.0, -0.35).t60[5], 0.616, 1e-3);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto p = draw_rt_profile({}, rng);
    EXPECT_GE(p.t60[3], 0.2);
    EXPECT_LE(p.t60[3], 1.5);
    EXPECT_LE(p.t60[5], p.t60[0]);
  }
}

TEST(DrawRoom, FeasibleAndDeterministic) {
  // Sabine: alpha = 0.161 V / (S T) = 0.161 * 60 / (94 * 0.5).
  const auto alpha = room::sabine_absorption(synthetic_profile(0.5, 0).t60, room::shoebox({5, 4, 3}));
  ASSERT_TRUE(alpha);
  EXPECT_NEAR((*alpha)[0], 0.161 * 60 / 47.0, 1e-12);

  Rng a(11), b(11);
  const auto ra = draw_room(synthetic_profile(0.5, 0), a);
  const auto rb = draw_room(synthetic_profile(0.5, 0), b);
  EXPECT_EQ(ra.room.volume, rb.room.volume);
  EXPECT_EQ(ra.alpha, rb.alpha);
  const auto rt = room::sabine_rt(ra.room);
  for (double t : rt) EXPECT_NEAR(t, 0.5, 1e-9);
  EXPECT_GE(ra.room.nominal_dims.z(), 2.5);
  EXPECT_LE(ra.room.nominal_dims.x(), 20.0);
}

TEST(DrawRoom, ShortReverbExhaustsTries) {
  // alpha <= 1 needs V/S <= 0.05 * 0.05 / 0.161, i.e. about 1.6 cm; no admissible room.
  Rng rng(3);
  try {
    draw_room(synthetic_profile(0.05, 0), rng, 50);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("synthetic(t_mid=0.05"), std::string::npos) << e.what();
  }
  EXPECT_THROW(draw_room(synthetic_profile(0.5, 0), rng, 0), std::invalid_argument);
}

TEST(Render, ImpulseSignalReproducesSrir) {
  const auto s = impulse_srir(300, 40, 0.5);
  std::vector<double> delta(1000, 0.0);
  delta[0] = 1.0;
  const auto mix = mix_sources({s}, {&delta}, 1000);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < 1000; ++i) EXPECT_NEAR(mix[c][i], i < 300 ? s.samples[c][i] : 0.0, 1e-12);
  }
}

TEST(Render, MixIsSumOfSoloRenders) {
  Rng rng(4);
  const auto s1 = impulse_srir(200, 30, 0.7), s2 = impulse_srir(200, 75, -0.4);
  std::vector<double> x1(800), x2(800);
  for (auto& v : x1) v = rng.normal();
  for (auto& v : x2) v = rng.normal();
  const auto both = mix_sources({s1, s2}, {&x1, &x2}, 800);
  const auto a = mix_sources({s1}, {&x1}, 800), b = mix_sources({s2}, {&x2}, 800);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < 800; ++i) EXPECT_NEAR(both[c][i], a[c][i] + b[c][i], 1e-12);
  }
}

TEST(Render, ScenePairContract) {
  const auto room = draw_room(synthetic_profile(0.4, 0), *std::make_unique<Rng>(5)).room;
  SceneConfig cfg;
  cfg.scene_seconds = 1.0;
  const auto corpus = synthetic_corpus(5, cfg.sample_rate, 1.0, 9);
  Rng rng(6);
  const auto pair = render_scene_pair("room_x", room, corpus, rng, cfg);
  EXPECT_EQ(pair.room_id, "room_x");
  for (const auto& s : pair.scenes) {
    ASSERT_EQ(s.audio.size(), 4u);
    EXPECT_EQ(s.audio[0].size(), 8000u);
    double peak = 0;
    for (const auto& ch : s.audio) {
      for (double v : ch) peak = std::max(peak, std::abs(v));
    }
    EXPECT_NEAR(peak, 0.9, 1e-12);
    EXPECT_GE(s.sources.size(), 1u);
    EXPECT_LE(s.sources.size(), 3u);
    EXPECT_TRUE(room.contains(s.receiver, kWallMargin));
    for (const auto& p : s.sources) EXPECT_TRUE(room.contains(p, kWallMargin));
    EXPECT_EQ(s.srirs.size(), s.sources.size());
  }
  EXPECT_THROW(render_scene(room, synthetic_corpus(2, cfg.sample_rate, 1.0, 1), rng, cfg), DatasetError);
}

TEST(NormalizeAlign, PeakShiftAndIdempotence) {
  const auto s = impulse_srir(1000, 480, 0.25);
  const auto a = normalize_align(s, true);
  EXPECT_EQ(a.samples[0].size(), 1000u);
  EXPECT_EQ(a.samples[0][kAlignLead], 1.0);
  EXPECT_EQ(a.samples[0][kAlignLead - 1], 0.0);
  EXPECT_NEAR(a.samples[0][kAlignLead + 10], 0.1, 1e-12);  // the echo at +10 keeps its 0.1 ratio
  EXPECT_TRUE(a.aligned);
  EXPECT_EQ(a.samples[0][999], 0.0);
  // A direct sound earlier than the lead-in is delayed onto it.
  const auto early = normalize_align(impulse_srir(100, 3, 1.0), true);
  EXPECT_EQ(early.samples[0][kAlignLead], 1.0);
  EXPECT_NEAR(early.samples[0][kAlignLead + 10], 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(a.toa_seconds, s.toa_seconds);
  const auto again = normalize_align(a, true);
  EXPECT_EQ(again.samples, a.samples);

  const auto u = normalize_align(s, false);
  EXPECT_FALSE(u.aligned);
  EXPECT_EQ(u.samples[0][480], 1.0);
  EXPECT_EQ(normalize_align(u, false).samples, u.samples);
  room::Srir silent = impulse_srir(100, 10, 0.0);
  EXPECT_THROW(normalize_align(silent, true), DatasetError);
}

TEST(LinePositions, GeometryOfTheEvaluationLine) {
  const auto room = room::shoebox({10, 8, 3});
  const Vec3 src(5, 4, 1.5);
  const auto line = line_positions(src, room);
  ASSERT_EQ(line.receivers.size(), 15u);
  EXPECT_FALSE(line.clipped);
  EXPECT_NEAR((line.receivers[7] - src).norm(), 1.0, 1e-12);
  EXPECT_NEAR((line.receivers[0] - src).norm(), std::sqrt(10.0), 1e-12);
  EXPECT_NEAR((line.receivers[14] - src).norm(), std::sqrt(10.0), 1e-12);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_NEAR((line.receivers[i] - src).norm(), (line.receivers[14 - i] - src).norm(), 1e-12);
    EXPECT_DOUBLE_EQ(line.receivers[i].z(), 1.5);
    EXPECT_TRUE(room.contains(line.receivers[i], kWallMargin));
  }
  const auto clipped = line_positions(Vec3(2, 2, 1.5), room::shoebox({4.5, 4.5, 3}));
  EXPECT_TRUE(clipped.clipped);
  EXPECT_GE(clipped.span, 3.0);
  EXPECT_THROW(line_positions(Vec3(1, 1, 1.5), room::shoebox({2, 2, 3})), DatasetError);
}

TEST(BuildDataset, ManifestFilesAndDeterminism) {
  DatasetConfig cfg;
  cfg.train_rooms = 2;
  cfg.val_rooms = 1;
  cfg.eval_rooms = 1;
  cfg.seed = 21;
  cfg.scene.scene_seconds = 1.0;
  cfg.scene.max_order = 6;
  cfg.synthetic_corpus_size = 4;
  const auto a = temp_dir("dataset_a"), b = temp_dir("dataset_b");
  const auto ma = build_dataset(a, cfg);
  build_dataset(b, cfg);
  const auto m = read_manifest(a);
  ASSERT_EQ(m.rows.size(), 4u);
  EXPECT_EQ(m.split("train").size(), 2u);
  EXPECT_EQ(m.split("val").size(), 1u);
  EXPECT_EQ(m.split("eval").size(), 1u);
  EXPECT_EQ(m.lines.size(), 15u);
  EXPECT_EQ(manifest_csv(m), manifest_csv(ma));
  for (const char* f : {"manifest.csv", "eval_lines.csv", "dataset.json"}) {
    EXPECT_EQ(io::read_file(a / f), io::read_file(b / f)) << f;
  }
  for (const auto& r : m.rows) {
    for (const auto& s : r.scenes) {
      EXPECT_EQ(io::read_file(a / s.file), io::read_file(b / s.file)) << s.file;
      const auto audio = io::read_wav(a / s.file);
      EXPECT_EQ(audio.channel_count(), 4u);
      EXPECT_EQ(audio.length(), 8000u);
      for (const auto& f : s.srir_files) {
        EXPECT_EQ(io::read_file(a / f), io::read_file(b / f)) << f;
        EXPECT_EQ(io::read_wav(a / f).length(), 2000u);
      }
    }
  }
  std::filesystem::remove(a / m.rows[0].scenes[1].file);
  EXPECT_THROW(read_manifest(a), DatasetError);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}
