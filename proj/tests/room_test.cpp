#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <tuple>

#include "srirgen/dsp/crossover.hpp"
#include "srirgen/dsp/fractional_delay.hpp"
#include "srirgen/io/wav.hpp"
#include "srirgen/room/simulate.hpp"

using namespace srirgen;
using namespace srirgen::room;

namespace {

using Key = std::tuple<long, long, long>;

Key key_of(const Vec3& p) {
  return {std::lround(p.x() * 1e6), std::lround(p.y() * 1e6), std::lround(p.z() * 1e6)};
}

// Test-side mirror enumeration: minimal order reaching each image position.
void brute_mirror(const RoomSpec& room, const Vec3& p, int last, int depth, int max_order,
                  std::map<Key, int>& out) {
  auto [it, inserted] = out.emplace(key_of(p), depth);
  if (!inserted) it->second = std::min(it->second, depth);
  if (depth == max_order) return;
  for (int w = 0; w < 6; ++w) {
    if (w == last) continue;
    const Plane& pl = room.walls[w];
    brute_mirror(room, p - 2.0 * (pl.normal.dot(p) - pl.offset) * pl.normal, w, depth + 1, max_order, out);
  }
}

// Number of planes x = m * L crossed by the straight segment a -> b.
int lattice_crossings(double a, double b, double L) {
  const double lo = std::min(a, b), hi = std::max(a, b);
  int count = 0;
  for (long m = static_cast<long>(std::floor(lo / L)) - 1; m <= static_cast<long>(std::ceil(hi / L)) + 1; ++m) {
    const double x = m * L;
    if (x > lo && x < hi) ++count;
  }
  return count;
}

// Same-side test for a convex planar polygon.
bool in_convex_polygon(const Vec3& p, const std::vector<Vec3>& poly, const Vec3& normal, double tol) {
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec3& a = poly[i];
    const Vec3& b = poly[(i + 1) % poly.size()];
    const double s = normal.dot((b - a).cross(p - a));
    const double ref = normal.dot((poly[(i + 2) % poly.size()] - a).cross(b - a)) < 0 ? 1 : -1;
    if (ref * s < -tol) return false;
  }
  return true;
}

// Unfolded path oracle: reflection points recovered by intersecting the
// receiver -> image line with each mirror plane in reverse order.
bool path_oracle(const RoomSpec& room, const ImageSource& img, const Vec3& receiver) {
  Vec3 from = receiver, to = img.position;
  for (int k = img.order - 1; k >= 0; --k) {
    const Plane& pl = room.walls[img.walls[k]];
    const double d0 = pl.normal.dot(from) - pl.offset;
    const double d1 = pl.normal.dot(to) - pl.offset;
    if (d0 < -1e-9 || d1 >= 0) return false;
    const Vec3 hit = from + d0 / (d0 - d1) * (to - from);
    if (!in_convex_polygon(hit, face_polygon(room, img.walls[k]), pl.normal, 1e-9)) return false;
    from = hit;
    to = to - 2.0 * (pl.normal.dot(to) - pl.offset) * pl.normal;
  }
  return true;
}

RoomSpec tilted_room() {
  RoomSpec box = shoebox(Vec3(5, 4, 3));
  auto j = to_json(box);
  const Vec3 n = Vec3(-1, 0.0, -0.35).normalized();  // ceiling-leaning far wall
  j["walls"][1]["normal"] = {n.x(), n.y(), n.z()};
  j["walls"][1]["offset"] = n.dot(Vec3(5, 2, 1.5));
  return room_from_json(j);
}

}  // namespace

TEST(MicArray, RegularTetrahedronOfRadius) {
  const MicArray a = array_geometry(Vec3::Zero(), 0.02);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(a.offsets[i].norm(), 0.02, 1e-15);
    EXPECT_NEAR(a.looks[i].norm(), 1.0, 1e-15);
    EXPECT_NEAR((a.offsets[i] / 0.02 - a.looks[i]).norm(), 0.0, 1e-12);
    for (int j = i + 1; j < 4; ++j) {
      const double angle = std::acos(a.looks[i].dot(a.looks[j])) * 180 / std::numbers::pi;
      EXPECT_NEAR(angle, std::acos(-1.0 / 3.0) * 180 / std::numbers::pi, 1e-9);
    }
  }
  EXPECT_NEAR((a.looks[0] - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
  const MicArray b = array_geometry(Vec3(1, 2, 3), 0.02);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR((b.capsule(i) - Vec3(1, 2, 3) - a.offsets[i]).norm(), 0, 1e-15);
  EXPECT_THROW(array_geometry(Vec3::Zero(), 0.0), std::invalid_argument);
}

TEST(MicArray, CardioidGain) {
  const Vec3 x = Vec3::UnitX();
  EXPECT_DOUBLE_EQ(cardioid_gain(x, x), 1.0);
  EXPECT_NEAR(cardioid_gain(x, Vec3::UnitY()), 0.5, 1e-15);
  EXPECT_NEAR(cardioid_gain(x, -x), 0.0, 1e-15);
  EXPECT_THROW(cardioid_gain(x, Vec3(2, 0, 0)), std::invalid_argument);
}

TEST(Room, ShoeboxVolumeAndSurface) {
  const RoomSpec r = make_room(Vec3(5, 4, 3), 0.0, 1);
  EXPECT_NEAR(r.volume, 60.0, 1e-12);
  EXPECT_NEAR(r.surface_area, 94.0, 1e-12);
  EXPECT_TRUE(is_shoebox(r));
}

TEST(Room, PerturbedRoomIsDeterministicPlanarAndClosed) {
  const RoomSpec a = make_room(Vec3(6, 5, 3), 0.02, 42);
  const RoomSpec b = make_room(Vec3(6, 5, 3), 0.02, 42);
  const RoomSpec c = make_room(Vec3(6, 5, 3), 0.02, 43);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_NE(to_json(a).dump(), to_json(c).dump());
  EXPECT_FALSE(is_shoebox(a));
  for (int w = 0; w < 6; ++w) {
    for (int v : face_vertices(w)) EXPECT_NEAR(a.walls[w].signed_distance(a.vertices[v]), 0.0, 1e-9);
  }
  for (const auto& v : a.vertices) {
    for (const auto& w : a.walls) EXPECT_GT(w.signed_distance(v), -1e-9);
  }
  EXPECT_NEAR(a.volume, 90.0, 18.0);
  EXPECT_THROW(make_room(Vec3(6, 5, 3), 0.06, 1), GeometryError);
  EXPECT_THROW(make_room(Vec3(6, 5, 3), -0.01, 1), GeometryError);
}

TEST(Room, JsonRoundTrip) {
  RoomSpec a = make_room(Vec3(7, 4, 3), 0.03, 5);
  set_uniform_absorption(a, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  const RoomSpec b = room_from_json(to_json(a));
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Sabine, Arithmetic) {
  BandValues rt;
  rt.fill(0.5);
  auto a = sabine_absorption(rt, 60, 94);
  ASSERT_TRUE(a.has_value());
  EXPECT_NEAR((*a)[3], 0.161 * 60 / (94 * 0.5), 1e-12);
  EXPECT_NEAR((*a)[3], 0.2055, 1e-4);
  rt.fill(0.05);
  EXPECT_FALSE(sabine_absorption(rt, 60, 94).has_value());
  rt.fill(10.0);
  auto c = sabine_absorption(rt, 60, 94);
  ASSERT_TRUE(c.has_value());
  EXPECT_NEAR((*c)[0], 0.0103, 1e-4);
}

TEST(Sabine, RoundTripThroughRoom) {
  RoomSpec r = shoebox(Vec3(5, 4, 3));
  BandValues rt = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
  set_uniform_absorption(r, *sabine_absorption(rt, r));
  const BandValues back = sabine_rt(r);
  for (std::size_t b = 0; b < kBandCount; ++b) EXPECT_NEAR(back[b], rt[b], 1e-12);
}

TEST(ImageSources, LowOrders) {
  RoomSpec r = shoebox(Vec3(5, 4, 3));
  const Vec3 s(1, 1, 1);
  auto o0 = image_sources(r, s, 0);
  ASSERT_EQ(o0.size(), 1u);
  EXPECT_EQ(o0[0].order, 0);
  EXPECT_EQ((o0[0].position - s).norm(), 0.0);
  for (double g : o0[0].band_gains) EXPECT_EQ(g, 1.0);
  for (auto method : {ImageMethod::kLattice, ImageMethod::kBeam, ImageMethod::kExhaustive}) {
    auto o1 = image_sources(r, s, 1, method);
    int first = 0;
    bool found = false;
    for (const auto& img : o1) {
      if (img.order != 1) continue;
      ++first;
      if (img.walls[0] == 0) {
        found = true;
        EXPECT_NEAR((img.position - Vec3(-1, 1, 1)).norm(), 0.0, 1e-12);
      }
    }
    EXPECT_EQ(first, 6);
    EXPECT_TRUE(found);
  }
  EXPECT_THROW(image_sources(r, Vec3(6, 1, 1), 2), GeometryError);
}

TEST(ImageSources, BandGainsAccumulatePerReflection) {
  RoomSpec r = shoebox(Vec3(5, 4, 3));
  set_uniform_absorption(r, {0.19, 0.36, 0.51, 0.64, 0.75, 0.84});
  for (const auto& img : image_sources(r, Vec3(1, 2, 1), 3)) {
    ASSERT_EQ(static_cast<int>(img.walls.size()), img.order);
    for (std::size_t b = 0; b < kBandCount; ++b) {
      EXPECT_NEAR(img.band_gains[b], std::pow(std::sqrt(1 - r.absorption[0][b]), img.order), 1e-12);
    }
  }
}

TEST(ImageSources, ShoeboxLatticeMatchesBruteForceMirroring) {
  const RoomSpec r = shoebox(Vec3(5, 4, 3));
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 s(rng.uniform(0.3, 4.7), rng.uniform(0.3, 3.7), rng.uniform(0.3, 2.7));
    std::map<Key, int> oracle;
    brute_mirror(r, s, -1, 0, 3, oracle);
    const auto lattice = image_sources(r, s, 3, ImageMethod::kLattice);
    std::map<Key, int> got;
    for (const auto& img : lattice) {
      EXPECT_TRUE(got.emplace(key_of(img.position), img.order).second) << "duplicate lattice image";
    }
    EXPECT_EQ(got, oracle);
  }
}

TEST(ImageSources, ShoeboxImagesAllVisibleAndMatchUnfoldedCrossings) {
  const RoomSpec r = shoebox(Vec3(5, 4, 3));
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 s(rng.uniform(0.3, 4.7), rng.uniform(0.3, 3.7), rng.uniform(0.3, 2.7));
    const Vec3 m(rng.uniform(0.3, 4.7), rng.uniform(0.3, 3.7), rng.uniform(0.3, 2.7));
    for (const auto& img : image_sources(r, s, 3)) {
      EXPECT_TRUE(visibility_test(img, m, r));
      const int crossings = lattice_crossings(m.x(), img.position.x(), 5) +
                            lattice_crossings(m.y(), img.position.y(), 4) +
                            lattice_crossings(m.z(), img.position.z(), 3);
      EXPECT_EQ(crossings, img.order);
    }
  }
}

TEST(ImageSources, TiltedWallVisibilityMatchesPathOracle) {
  const RoomSpec r = tilted_room();
  Rng rng(5);
  int visible = 0, hidden = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 s, m;
    do s = Vec3(rng.uniform(0.2, 4.5), rng.uniform(0.2, 3.8), rng.uniform(0.2, 2.8)); while (!r.contains(s, 0.1));
    do m = Vec3(rng.uniform(0.2, 4.5), rng.uniform(0.2, 3.8), rng.uniform(0.2, 2.8)); while (!r.contains(m, 0.1));
    for (const auto& img : image_sources(r, s, 2, ImageMethod::kExhaustive)) {
      const bool expect = path_oracle(r, img, m);
      EXPECT_EQ(visibility_test(img, m, r), expect);
      (expect ? visible : hidden)++;
    }
  }
  EXPECT_GT(hidden, 0);
  EXPECT_GT(visible, 0);
}

TEST(ImageSources, BeamPruningKeepsEveryVisiblePath) {
  const RoomSpec r = make_room(Vec3(6, 5, 3), 0.05, 9);
  Rng rng(8);
  for (int trial = 0; trial < 4; ++trial) {
    Vec3 s(rng.uniform(0.5, 5.5), rng.uniform(0.5, 4.5), rng.uniform(0.5, 2.5));
    Vec3 m(rng.uniform(0.5, 5.5), rng.uniform(0.5, 4.5), rng.uniform(0.5, 2.5));
    auto visible_set = [&](ImageMethod method) {
      std::set<Key> out;
      for (const auto& img : image_sources(r, s, 4, method)) {
        if (visibility_test(img, m, r)) out.insert(key_of(img.position));
      }
      return out;
    };
    const auto beam = visible_set(ImageMethod::kBeam);
    const auto all = visible_set(ImageMethod::kExhaustive);
    EXPECT_EQ(beam, all);
    EXPECT_LT(image_sources(r, s, 4, ImageMethod::kBeam).size(),
              image_sources(r, s, 4, ImageMethod::kExhaustive).size());
  }
}

TEST(FractionalDelay, IntegerDelayIsExactImpulse) {
  std::vector<double> buf(64, 0.0);
  dsp::add_fractional_impulse(buf, 20.0, 0.7);
  for (std::size_t n = 0; n < buf.size(); ++n) EXPECT_NEAR(buf[n], n == 20 ? 0.7 : 0.0, 1e-15);
}

TEST(FractionalDelay, FractionalDelayPreservesDcAndCentroid) {
  std::vector<double> buf(96, 0.0);
  dsp::add_fractional_impulse(buf, 40.3, 1.0);
  double sum = 0, moment = 0;
  for (std::size_t n = 0; n < buf.size(); ++n) {
    sum += buf[n];
    moment += n * buf[n];
  }
  EXPECT_NEAR(sum, 1.0, 5e-3);
  EXPECT_NEAR(moment / sum, 40.3, 0.05);
}

TEST(Crossover, BandsSumToOne) {
  dsp::CrossoverBank bank({125, 250, 500, 1000, 2000, 4000}, 48000, 4096);
  for (std::size_t k = 0; k < 2049; ++k) {
    double s = 0;
    for (std::size_t b = 0; b < bank.bands(); ++b) {
      EXPECT_GE(bank.weights(b)[k], 0.0);
      s += bank.weights(b)[k];
    }
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
  // 1 kHz bin lands fully in the 1 kHz band
  const std::size_t k1 = 1000 * 4096 / 48000;
  EXPECT_NEAR(bank.weights(3)[k1], 1.0, 1e-12);
}

namespace {

RoomSpec anechoic_box() {
  RoomSpec r = shoebox(Vec3(12, 10, 6));
  BandValues one;
  one.fill(1.0);
  set_uniform_absorption(r, one);
  return r;
}

std::size_t argmax_abs(const std::vector<double>& x) {
  std::size_t best = 0;
  for (std::size_t n = 1; n < x.size(); ++n) {
    if (std::abs(x[n]) > std::abs(x[best])) best = n;
  }
  return best;
}

}  // namespace

TEST(Simulate, FreeFieldDirectArrivals) {
  const RoomSpec r = anechoic_box();
  const MicArray arr = array_geometry(Vec3(3, 4, 2));
  const Vec3 s = arr.center + Vec3(3.43, 0, 0);
  SimConfig cfg;
  cfg.fs = 48000;
  cfg.duration = 0.05;
  cfg.max_order = 1;
  cfg.tail = false;
  const Srir out = simulate_srir(r, s, arr, cfg);
  ASSERT_EQ(out.samples.size(), 4u);
  ASSERT_EQ(out.length(), 2400u);
  for (int c = 0; c < 4; ++c) {
    const Vec3 ray = s - arr.capsule(c);
    const double delay = ray.norm() / 343.0 * 48000;
    const std::size_t peak = argmax_abs(out.samples[c]);
    EXPECT_LE(std::abs(static_cast<double>(peak) - delay), 1.0);
    // band-limited impulse: the peak sample holds a windowed-sinc tap of the arrival
    const double amp = cardioid_gain(arr.looks[c], ray.normalized()) / ray.norm();
    const double t = static_cast<double>(peak) - delay;
    const double tap = 0.5 * (1 + std::cos(std::numbers::pi * t / 16)) * dsp::sinc(t);
    EXPECT_NEAR(out.samples[c][peak], amp * tap, 1e-3 * amp);
  }
  EXPECT_NEAR(out.toa_seconds, 0.01, 1e-12);
}

TEST(Simulate, DirectPeakAtExpectedSampleAndDistanceLaw) {
  const RoomSpec r = anechoic_box();
  const MicArray arr = array_geometry(Vec3(2, 5, 3), 0.0 + 1e-9);
  SimConfig cfg;
  cfg.duration = 0.05;
  cfg.max_order = 0;
  cfg.tail = false;
  const Srir near = simulate_srir(r, arr.center + Vec3(3.43, 0, 0), arr, cfg);
  const Srir far = simulate_srir(r, arr.center + Vec3(6.86, 0, 0), arr, cfg);
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(argmax_abs(near.samples[c]), 480u);
    EXPECT_EQ(argmax_abs(far.samples[c]), 960u);
    const double drop = 20 * std::log10(std::abs(near.samples[c][480]) / std::abs(far.samples[c][960]));
    EXPECT_NEAR(drop, 6.02, 0.1);
  }
}

TEST(Simulate, EnergyDecreasesWithAbsorption) {
  const MicArray arr = array_geometry(Vec3(2, 1.5, 1.2));
  double prev = std::numeric_limits<double>::infinity();
  for (double alpha : {0.2, 0.5, 0.8}) {
    RoomSpec r = make_room(Vec3(5, 4, 3), 0.02, 3);
    BandValues a;
    a.fill(alpha);
    set_uniform_absorption(r, a);
    SimConfig cfg;
    cfg.fs = 16000;
    cfg.duration = 0.2;
    cfg.max_order = 6;
    cfg.tail = false;
    const Srir out = simulate_srir(r, Vec3(3.5, 2.5, 1.6), arr, cfg);
    double e = 0;
    for (const auto& ch : out.samples) for (double v : ch) e += v * v;
    EXPECT_LT(e, prev);
    prev = e;
  }
}

TEST(Simulate, SeededRunsAreBitIdentical) {
  RoomSpec r = make_room(Vec3(4, 3.5, 2.8), 0.02, 77);
  BandValues rt;
  rt.fill(0.4);
  set_uniform_absorption(r, *sabine_absorption(rt, r));
  const MicArray arr = array_geometry(Vec3(1.5, 1.5, 1.4));
  SimConfig cfg;
  cfg.fs = 8000;
  cfg.duration = 0.25;
  cfg.max_order = 8;
  cfg.seed = 5;
  const Srir a = simulate_srir(r, Vec3(3, 2.5, 1.2), arr, cfg);
  const Srir b = simulate_srir(r, Vec3(3, 2.5, 1.2), arr, cfg);
  EXPECT_EQ(a.samples, b.samples);
  cfg.seed = 6;
  const Srir c = simulate_srir(r, Vec3(3, 2.5, 1.2), arr, cfg);
  EXPECT_NE(a.samples, c.samples);
}

TEST(Simulate, RejectsCapsulesOutsideRoom) {
  const RoomSpec r = shoebox(Vec3(5, 4, 3));
  SimConfig cfg;
  EXPECT_THROW(simulate_srir(r, Vec3(1, 1, 1), array_geometry(Vec3(0.005, 2, 1)), cfg), GeometryError);
  EXPECT_THROW(simulate_srir(r, Vec3(-1, 1, 1), array_geometry(Vec3(2, 2, 1)), cfg), GeometryError);
}

namespace {

BandSignals steady_bands(double level, std::size_t len) {
  BandSignals ism(2, Channels(4, std::vector<double>(len, 0.0)));
  Rng rng(1);
  for (auto& band : ism) {
    for (auto& ch : band) {
      for (std::size_t n = 0; n < 400; ++n) ch[n] = level * rng.normal();
    }
  }
  return ism;
}

}  // namespace

TEST(DiffuseTail, ZeroReferenceEnergyGivesZeroTail) {
  const BandSignals ism(2, Channels(4, std::vector<double>(4000, 0.0)));
  TailConfig cfg{8000, 400};
  const Channels t = diffuse_tail(ism, {0.5, 0.5}, {500, 1000}, cfg, 3);
  for (const auto& ch : t) for (double v : ch) EXPECT_EQ(v, 0.0);
}

TEST(DiffuseTail, SeededAndDecorrelated) {
  const BandSignals ism = steady_bands(0.1, 8000);
  TailConfig cfg{8000, 400};
  const Channels a = diffuse_tail(ism, {0.5, 0.5}, {500, 1000}, cfg, 3);
  const Channels b = diffuse_tail(ism, {0.5, 0.5}, {500, 1000}, cfg, 3);
  EXPECT_EQ(a, b);
  double c01 = 0, e0 = 0, e1 = 0;
  for (std::size_t n = 400; n < 8000; ++n) {
    c01 += a[0][n] * a[1][n];
    e0 += a[0][n] * a[0][n];
    e1 += a[1][n] * a[1][n];
  }
  EXPECT_LT(std::abs(c01) / std::sqrt(e0 * e1), 0.2);
  for (std::size_t n = 0; n < 400; ++n) EXPECT_EQ(a[0][n], 0.0);
}

TEST(DiffuseTail, EnvelopeDropsSixtyDecibelsPerReverbTime) {
  const std::size_t len = 8000 * 2;
  const BandSignals ism = steady_bands(0.1, len);
  TailConfig cfg{8000, 400};
  const Channels t = diffuse_tail(ism, {0.5, 0.5}, {500, 1000}, cfg, 9);
  auto energy = [&](std::size_t from) {
    double e = 0;
    for (const auto& ch : t) for (std::size_t n = from; n < from + 400; ++n) e += ch[n] * ch[n];
    return e;
  };
  // 0.5 s later the windowed energy is 60 dB lower
  const double drop = 10 * std::log10(energy(800) / energy(800 + 4000));
  EXPECT_NEAR(drop, 60.0, 3.0);
}

TEST(Wav, FloatRoundTripAndSidecar) {
  const auto dir = std::filesystem::temp_directory_path() / "srirgen_room_test";
  std::filesystem::create_directories(dir);
  Srir s;
  s.sample_rate = 8000;
  s.source = Vec3(1, 2, 3);
  s.receiver = Vec3(3, 2, 1);
  s.toa_seconds = 0.0125;
  s.samples.assign(4, std::vector<double>(100));
  for (int c = 0; c < 4; ++c) {
    for (int n = 0; n < 100; ++n) s.samples[c][n] = std::sin(0.1 * n + c) * 0.5;
  }
  write_srir(dir / "x.wav", s);
  const Srir back = read_srir(dir / "x.wav");
  EXPECT_EQ(back.sample_rate, 8000);
  ASSERT_EQ(back.samples.size(), 4u);
  for (int c = 0; c < 4; ++c) {
    for (int n = 0; n < 100; ++n) {
      EXPECT_EQ(back.samples[c][n], static_cast<double>(static_cast<float>(s.samples[c][n])));
    }
  }
  EXPECT_NEAR((back.source - s.source).norm(), 0, 1e-15);
  EXPECT_DOUBLE_EQ(back.toa_seconds, 0.0125);
  EXPECT_THROW(io::read_wav(dir / "missing.wav"), io::IoError);
}
