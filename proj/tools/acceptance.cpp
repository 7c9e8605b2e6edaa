// Acceptance run: one PASS/FAIL line per criterion, each against its runtime
// budget. Exit status is nonzero when any selected criterion fails.

#include <cblas.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include "CLI11.hpp"
#include "srirgen/analysis/similarity.hpp"
#include "srirgen/core/gradcheck.hpp"
#include "srirgen/pipeline/stages.hpp"

namespace fs = std::filesystem;
using namespace srirgen;
using room::Vec3;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path workdir;
  std::string cli;
  int generator_epochs = 1700;
  std::uint64_t seed = 2024;
};

std::string f(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

Vec3 random_unit(Rng& rng) { return Vec3(rng.normal(), rng.normal(), rng.normal()).normalized(); }

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

// ---- 1: image-source geometry --------------------------------------------------

using Key = std::tuple<long, long, long>;
Key key_of(const Vec3& p) { return {std::lround(p.x() * 1e6), std::lround(p.y() * 1e6), std::lround(p.z() * 1e6)}; }

// Axis image n of coordinate s in [0, L]: n*L + s for even n, n*L + L - s for odd.
double lattice_coord(long n, double s, double L) { return n * L + (n % 2 == 0 ? s : L - s); }

Outcome geometry_oracle() {
  const Vec3 dims(5, 4, 3);
  const auto box = room::shoebox(dims);
  Rng rng(101);
  std::size_t images = 0, visible = 0, mismatched = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 s(rng.uniform(0.3, 4.7), rng.uniform(0.3, 3.7), rng.uniform(0.3, 2.7));
    const Vec3 r(rng.uniform(0.3, 4.7), rng.uniform(0.3, 3.7), rng.uniform(0.3, 2.7));
    std::map<Key, int> expect;
    for (long a = -3; a <= 3; ++a) {
      for (long b = -3; b <= 3; ++b) {
        for (long c = -3; c <= 3; ++c) {
          const long order = std::abs(a) + std::abs(b) + std::abs(c);
          if (order > 3) continue;
          expect[key_of({lattice_coord(a, s.x(), dims.x()), lattice_coord(b, s.y(), dims.y()),
                         lattice_coord(c, s.z(), dims.z())})] = static_cast<int>(order);
        }
      }
    }
    std::map<Key, int> got;
    for (const auto& img : room::image_sources(box, s, 3)) {
      if (!got.emplace(key_of(img.position), img.order).second) ++mismatched;
      ++images;
      visible += room::visibility_test(img, r, box) ? 1 : 0;
    }
    if (got != expect) ++mismatched;
  }
  // Direct-sound arrival per capsule at 48 kHz.
  room::SimConfig cfg;
  cfg.fs = 48000;
  cfg.duration = 0.1;
  cfg.max_order = 0;
  cfg.tail = false;
  const auto big = room::shoebox(Vec3(12, 10, 4));
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    const Vec3 s(rng.uniform(0.5, 11.5), rng.uniform(0.5, 9.5), rng.uniform(0.5, 3.5));
    const Vec3 c(rng.uniform(0.5, 11.5), rng.uniform(0.5, 9.5), rng.uniform(0.5, 3.5));
    const auto arr = room::array_geometry(c);
    const auto out = room::simulate_srir(big, s, arr, cfg);
    for (int m = 0; m < 4; ++m) {
      const double expect = (s - arr.capsule(m)).norm() / room::kSpeedOfSound * cfg.fs;
      worst = std::max(worst, std::abs(static_cast<double>(analysis::argmax_abs(out.samples[m])) - expect));
    }
  }
  const bool pass = mismatched == 0 && visible == images && worst <= 1.0;
  return {pass, "lattice mismatches " + std::to_string(mismatched) + ", visible " + std::to_string(visible) + "/" +
                    std::to_string(images) + ", worst ToA offset " + f(worst) + " samples"};
}

// ---- 2: Sabine consistency ------------------------------------------------------

Outcome sabine_consistency() {
  std::string detail;
  bool pass = true;
  for (double t60 : {0.3, 0.6, 1.0}) {
    auto box = room::shoebox(Vec3(7, 5, 3));
    room::BandValues rt;
    rt.fill(t60);
    room::set_uniform_absorption(box, *room::sabine_absorption(rt, box));
    room::SimConfig cfg;
    cfg.fs = 48000;
    cfg.duration = 1.2 * t60 + 0.1;
    cfg.seed = 7;
    const auto out = room::simulate_srir(box, Vec3(2.1, 1.7, 1.4), room::array_geometry(Vec3(5.2, 3.1, 1.6)), cfg);
    const std::vector<double> band{1000};
    double sum = 0;
    int n = 0;
    for (const auto& ch : out.samples) {
      const auto filtered = analysis::octave_filterbank(ch, band, cfg.fs).front();
      const auto edc = analysis::schroeder_edc(filtered, cfg.fs);
      sum += analysis::rt_from_edc(edc, analysis::RtMethod::kT30);
      ++n;
    }
    const double measured = sum / n, err = std::abs(measured - t60) / t60;
    pass = pass && err <= 0.25;
    detail += (detail.empty() ? "" : ", ") + std::string("T60 ") + f(t60) + " -> T30 " + f(measured) + " (" +
              f(100 * err, 3) + "%)";
  }
  return {pass, detail};
}

// ---- 3: RT estimator ------------------------------------------------------------

Outcome rt_estimator() {
  const double fs = 48000;
  const std::vector<double> centers(room::kOctaveCenters.begin(), room::kOctaveCenters.end());
  double worst = 0;
  for (double rt : {0.2, 0.5, 1.0, 2.0}) {
    for (std::size_t b = 0; b < centers.size(); ++b) {
      std::vector<double> x(static_cast<std::size_t>(fs * 1.5 * rt));
      for (std::size_t n = 0; n < x.size(); ++n) {
        const double t = n / fs;
        x[n] = std::pow(10.0, -3.0 * t / rt) * std::sin(2 * std::numbers::pi * centers[b] * t);
      }
      const double got = analysis::rt_per_band(x, std::span(centers).subspan(b, 1), fs)[0];
      worst = std::max(worst, std::isfinite(got) ? std::abs(got - rt) / rt : 1.0);
    }
  }
  return {worst <= 0.01, "worst relative error " + f(100 * worst, 3) + "% over 4 decays x 6 bands"};
}

// ---- 4: DRR estimator -----------------------------------------------------------

Outcome drr_estimator() {
  const double fs = 8000;
  double worst = 0;
  bool invariant = true;
  for (double db : {-10.0, 0.0, 10.0}) {
    std::vector<double> x(4000, 0.0);
    x[200] = 1.0;
    x[1200] = std::pow(10.0, -db / 20);
    const analysis::Channels ch(4, x);
    const double d = analysis::broadband_drr(ch, fs);
    worst = std::max(worst, std::abs(d - db));
    for (double g : {0.25, 2.0, 1024.0}) {
      analysis::Channels scaled = ch;
      for (auto& c : scaled) {
        for (double& v : c) v *= g;
      }
      invariant = invariant && analysis::broadband_drr(scaled, fs) == d;
    }
  }
  return {worst <= 0.1 && invariant,
          "worst error " + f(worst) + " dB, gain invariance " + (invariant ? "exact" : "broken")};
}

// ---- 5: DoA estimator -----------------------------------------------------------

Outcome doa_estimator() {
  const auto arr = room::array_geometry(Vec3::Zero());
  const double fs = 48000;
  Rng rng(505);
  double plane = 0;
  for (int k = 0; k < 100; ++k) {
    const Vec3 u = random_unit(rng);
    analysis::Channels x(4, std::vector<double>(512, 0.0));
    for (int c = 0; c < 4; ++c) {
      const double d = 100.37 - arr.offsets[c].dot(u) / room::kSpeedOfSound * fs;
      dsp::add_fractional_impulse(x[c], d, room::cardioid_gain(arr.looks[c], u));
    }
    plane += analysis::great_circle_error(analysis::doa_direct(x, fs, arr), u);
  }
  plane /= 100;
  auto absorbing = room::shoebox(Vec3(30, 30, 30));
  room::set_uniform_absorption(absorbing, room::BandValues{1, 1, 1, 1, 1, 1});
  const auto center = room::array_geometry(Vec3(15, 15, 15));
  room::SimConfig cfg;
  cfg.fs = fs;
  cfg.duration = 0.05;
  cfg.max_order = 0;
  cfg.tail = false;
  double sim_worst = 0;
  for (int k = 0; k < 20; ++k) {
    const Vec3 u = random_unit(rng);
    const auto s = room::simulate_srir(absorbing, center.center + 3.0 * u, center, cfg);
    sim_worst = std::max(sim_worst, analysis::great_circle_error(analysis::doa_direct(s.samples, fs, center), u));
  }
  return {plane < 2.0 && sim_worst < 5.0,
          "plane waves mean " + f(plane) + " deg, simulated worst " + f(sim_worst) + " deg"};
}

// ---- 6: NT-Xent -----------------------------------------------------------------

double reference_nt_xent(const std::vector<std::vector<double>>& z, double tau) {
  const std::size_t m = z.size();
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < z[i].size(); ++k) s += z[i][k] * z[j][k];
    return s / tau;
  };
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i % 2 == 0 ? i + 1 : i - 1;
    double denom = 0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(sim(i, k));
    }
    total -= std::log(std::exp(sim(i, j)) / denom);
  }
  return total / static_cast<double>(m);
}

Tensor<double> unit_rows(Rng& rng, std::size_t m, std::size_t d) {
  Tensor<double> t({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    double n = 0;
    for (std::size_t k = 0; k < d; ++k) n += std::pow(t[i * d + k] = rng.normal(), 2);
    for (std::size_t k = 0; k < d; ++k) t[i * d + k] /= std::sqrt(n);
  }
  return t;
}

Outcome nt_xent_oracle() {
  Rng rng(606);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.integer(1, 8)), d = 16;
    const auto z = unit_rows(rng, 2 * n, d);
    std::vector<std::vector<double>> rows(2 * n, std::vector<double>(d));
    for (std::size_t i = 0; i < 2 * n; ++i) std::copy_n(z.data() + i * d, d, rows[i].begin());
    worst = std::max(worst, std::abs(encoder::nt_xent_loss(z, 0.1).loss - reference_nt_xent(rows, 0.1)));
  }
  const double single = encoder::nt_xent_loss(unit_rows(rng, 2, 8), 0.1).loss;
  double ident_err = 0;
  for (std::size_t n : {2u, 4u, 8u}) {
    const auto one = unit_rows(rng, 1, 8);
    Tensor<double> same({2 * n, 8});
    for (std::size_t i = 0; i < 2 * n; ++i) std::copy_n(one.data(), 8, same.data() + i * 8);
    ident_err = std::max(ident_err, std::abs(encoder::nt_xent_loss(same, 0.1).loss - std::log(2.0 * n - 1)));
  }
  return {worst <= 1e-6 && single == 0.0 && ident_err <= 1e-6,
          "brute-force gap " + f(worst, 3) + ", N=1 loss " + f(single) + ", identical-batch gap " + f(ident_err, 3)};
}

// ---- 7: diffusion math ----------------------------------------------------------

Outcome diffusion_math() {
  diffusion::DiffusionConfig cfg;
  const auto t = diffusion::noise_schedule(cfg);
  bool ok = t.size() == 35 && t.front() == 10.0 && t.back() == 1e-6;
  for (std::size_t i = 1; i < t.size(); ++i) ok = ok && t[i] < t[i - 1];
  double lam = 0;
  for (int i = 0; i < 20; ++i) {
    const double sigma = std::pow(10.0, -6.0 + 7.0 * i / 19.0);
    const auto p = diffusion::precondition_coeffs(sigma, 0.12);
    lam = std::max(lam, std::abs(p.lambda * p.c_out * p.c_out - 1.0));
  }
  cfg.sigma_data = 0.12;
  cfg.length = 256;
  Rng rng(707);
  diffusion::Generator<float> g(cfg, rng);
  const auto x = random_tensor<float>({2, 4, 256}, rng);
  const auto h = random_tensor<float>({2, cfg.h_dim}, rng);
  const auto v = random_tensor<float>({2, 3}, rng);
  const std::vector<double> sig{0.02, 4.0};
  typename diffusion::Generator<float>::State st;
  const auto d = g.denoise(x, sig, h, v, st);
  std::size_t exact = 0;
  for (std::size_t b = 0; b < 2; ++b) {
    const double c_skip = diffusion::precondition_coeffs(sig[b], cfg.sigma_data).c_skip;
    for (std::size_t i = 0; i < 4 * 256; ++i) {
      exact += d[b * 1024 + i] == static_cast<float>(c_skip * x[b * 1024 + i]) ? 1 : 0;
    }
  }
  return {ok && lam <= 1e-12 && exact == 2048,
          std::string("schedule ") + (ok ? "ok" : "wrong") + " (" + f(t.front()) + " .. " + f(t.back()) +
              "), max |lambda c_out^2 - 1| " + f(lam, 3) + ", skip-only outputs " + std::to_string(exact) + "/2048"};
}

// ---- 8: sampler statistics ------------------------------------------------------

Outcome sampler_stats() {
  diffusion::DiffusionConfig cfg;
  const double sd = 0.5;
  auto ideal = [&](const Tensor<double>& x, double sigma) {
    Tensor<double> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * sd * sd / (sd * sd + sigma * sigma);
    return out;
  };
  bool pass = true;
  std::string detail;
  for (double churn : {0.0, 1.0}) {
    Rng rng(808);
    const auto x = diffusion::sample<double>(ideal, {10000}, cfg, churn, rng);
    double m = 0, q = 0;
    for (double v : x) m += v;
    m /= x.size();
    for (double v : x) q += (v - m) * (v - m);
    const double s = std::sqrt(q / x.size()), err = std::abs(s - sd) / sd;
    pass = pass && err <= 0.05;
    detail += (detail.empty() ? "" : ", ") + std::string("churn ") + f(churn) + ": std " + f(s) + " (" +
              f(100 * err, 2) + "%)";
  }
  return {pass, detail + " vs sigma_data " + f(sd)};
}

// ---- 9: gradients ---------------------------------------------------------------

void randomize_zero_params(const std::vector<Param<double>*>& ps, Rng& rng) {
  for (auto* p : ps) {
    if (std::all_of(p->value.begin(), p->value.end(), [](double v) { return v == 0.0; })) {
      for (auto& v : p->value) v = rng.normal(0.0, 0.1);
    }
  }
}

Outcome gradients() {
  Rng rng(909);
  std::map<std::string, double> layer, e2e;
  auto t2 = [&](Shape s) { return random_tensor<double>(std::move(s), rng); };
  layer["conv1d-dilated"] =
      grad_check(*make_layer<double>({LayerKind::kConv1dDilated, "c1", 3, 4, 3, 1, 4}, rng), t2({2, 3, 17}));
  layer["conv2d"] = grad_check(*make_layer<double>({LayerKind::kConv2d, "c2", 2, 3, 3, 2}, rng), t2({2, 2, 7, 6}));
  layer["linear"] = grad_check(*make_layer<double>({LayerKind::kLinear, "lin", 4, 4}, rng), t2({4, 4}));
  {
    BatchNorm<double> bn({LayerKind::kBatchNorm, "bn", 0, 3});
    bn.params()[0]->value = t2({3});
    layer["batchnorm-train"] = grad_check(bn, t2({8, 3, 4}));
    layer["batchnorm-eval"] = grad_check(bn, t2({8, 3, 4}), 1e-6, Mode::kEval);
  }
  layer["relu"] = grad_check(*make_layer<double>({LayerKind::kRelu}, rng), t2({3, 7}));
  layer["gelu"] = grad_check(*make_layer<double>({LayerKind::kGelu}, rng), t2({3, 7}));
  layer["maxpool-time"] = grad_check(*make_layer<double>({LayerKind::kMaxPoolTime}, rng), t2({2, 3, 5, 2}));
  layer["dropout"] =
      grad_check(*make_layer<double>({LayerKind::kDropout, "drop", 0, 0, 3, 1, 1, 0.3}, rng), t2({3, 7}));
  {
    Film<double> film({LayerKind::kFilm, "film", 5, 3}, rng);
    for (auto& v : film.projection().weight().value) v = rng.normal(0.0, 0.3);
    auto x = t2({2, 3, 6}), c = t2({2, 5});
    Cache<double> cache;
    GradCheckTarget t;
    t.inputs = {&x, &c};
    t.params = film.params();
    t.forward = [&] { return film.forward(x, c, cache); };
    t.backward = [&](const Tensor<double>& g) {
      auto [gx, gc] = film.backward(cache, g);
      return std::vector<Tensor<double>>{gx, gc};
    };
    layer["film"] = grad_check_report(t, 1e-6).max_relative_error;
  }
  {
    encoder::ResidualBlock<double> block("res", 3, 4, rng);
    auto x = t2({4, 3, 6, 5});
    typename encoder::ResidualBlock<double>::State st;
    GradCheckTarget t;
    t.inputs = {&x};
    t.params = block.params();
    t.forward = [&] { return block.forward(x, st, Mode::kTrain); };
    t.backward = [&](const Tensor<double>& g) { return std::vector<Tensor<double>>{block.backward(st, g)}; };
    layer["encoder-residual-block"] = grad_check_report(t, 1e-6).max_relative_error;
  }
  {
    diffusion::UnetConfig u;
    diffusion::ResBlock1d<double> block("rb", 6, 4, 5, u, rng);
    randomize_zero_params(block.params(), rng);
    auto x = t2({2, 6, 12}), c = t2({2, 5});
    typename diffusion::ResBlock1d<double>::State st;
    GradCheckTarget t;
    t.inputs = {&x, &c};
    t.params = block.params();
    t.forward = [&] { return block.forward(x, c, st); };
    t.backward = [&](const Tensor<double>& g) {
      auto [gx, gc] = block.backward(st, g);
      return std::vector<Tensor<double>>{gx, gc};
    };
    layer["unet-residual-block"] = grad_check_report(t, 1e-6).max_relative_error;
  }
  {
    diffusion::CondMlp<double> mlp("m", 5, {6, 7, 8}, rng);
    auto x = t2({3, 5});
    typename diffusion::CondMlp<double>::State st;
    GradCheckTarget t;
    t.inputs = {&x};
    t.params = mlp.params();
    t.forward = [&] { return mlp.forward(x, st); };
    t.backward = [&](const Tensor<double>& g) { return std::vector<Tensor<double>>{mlp.backward(st, g)}; };
    layer["conditioning-mlp"] = grad_check_report(t, 1e-6).max_relative_error;
  }
  {
    encoder::EncoderConfig c;
    c.block_count = 2;
    c.base_channels = 4;
    c.freq_bins = 4;
    c.projection_hidden = 6;
    c.embedding_dim = 5;
    c.dropout = 0.0;
    encoder::RoomEncoder<double> enc(c, rng);
    auto x = t2({4, 8, 6, 4});
    typename encoder::RoomEncoder<double>::State st;
    typename encoder::RoomEncoder<double>::ProjectionState ps;
    GradCheckTarget t;
    t.inputs = {&x};
    t.params = enc.params();
    t.forward = [&] {
      const auto z = enc.project(enc.embed(x, st, Mode::kTrain), ps, Mode::kTrain, nullptr);
      return Tensor<double>({1}, encoder::nt_xent_loss(z, c.temperature).loss);
    };
    t.backward = [&](const Tensor<double>& g) {
      auto gz = encoder::nt_xent_loss(ps.z, c.temperature).grad;
      gz *= g[0];
      return std::vector<Tensor<double>>{enc.embed_backward(st, enc.project_backward(ps, gz))};
    };
    e2e["encoder-nt-xent"] = grad_check_report(t, 1e-6).max_relative_error;
  }
  {
    // Toy denoiser: depth 2, 8 channels, 256 samples.
    diffusion::DiffusionConfig c;
    c.unet.depth = 2;
    c.unet.base_channels = 8;
    c.cond = {8, 8, 8};
    c.rff_dim = 8;
    c.h_dim = 4;
    c.length = 256;
    c.sigma_data = 0.2;
    diffusion::Generator<double> g(c, rng);
    randomize_zero_params(g.params(), rng);
    auto x0 = random_tensor<double>({2, 4, 256}, rng, 0.2);
    auto h = t2({2, 4}), v = t2({2, 3});
    const std::vector<double> sigma{0.3, 2.0};
    GradCheckTarget t;
    t.params = g.params();
    t.forward = [&] {
      Rng noise(99);
      return Tensor<double>({1}, diffusion::training_loss(g, x0, h, v, noise, false, &sigma).loss);
    };
    t.backward = [&](const Tensor<double>& up) {
      Rng noise(99);
      diffusion::training_loss(g, x0, h, v, noise, true, &sigma);
      for (auto* p : g.params()) p->grad *= up[0];
      return std::vector<Tensor<double>>{};
    };
    e2e["denoiser-loss"] = grad_check_report(t, 1e-6, 7, 5).max_relative_error;
  }
  double lw = 0, ew = 0;
  std::string wl, we;
  for (const auto& [k, v] : layer) {
    if (v >= lw) lw = v, wl = k;
  }
  for (const auto& [k, v] : e2e) {
    if (v >= ew) ew = v, we = k;
  }
  return {lw < 1e-4 && ew < 1e-3, std::to_string(layer.size()) + " layer checks, worst " + f(lw, 3) + " (" + wl +
                                      "); end-to-end worst " + f(ew, 3) + " (" + we + ")"};
}

// ---- 10: encoder training smoke ---------------------------------------------------

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb + 1e-30);
}

Outcome encoder_smoke(const Options& o) {
  const auto pre = pipeline::presets(pipeline::Scale::kDesk);
  auto dcfg = pre.dataset;
  dcfg.train_rooms = 16;
  dcfg.val_rooms = 0;
  dcfg.eval_rooms = 0;
  dcfg.seed = o.seed;
  const fs::path root = o.workdir / "encoder_rooms";
  fs::remove_all(root);
  const auto m = dataset::build_dataset(root, dcfg);
  const auto set = pipeline::load_scenes(m, "train", pre.features);
  const auto stats = pipeline::scene_stats(set, "acceptance");
  const auto pairs = pipeline::scene_pairs(set, stats);
  auto cfg = pre.encoder;
  cfg.epochs = 20;
  auto trained = encoder::train_encoder(pairs, {}, cfg, o.seed);
  const double first = trained.log.front().train_loss, last = trained.log.back().train_loss;
  const double drop = 1.0 - last / first;

  // Held-out pairs: new scenes in the same rooms, from the dataset's corpus
  // with fresh positions and signal draws.
  const auto corpus = dataset::synthetic_corpus(dcfg.synthetic_corpus_size, dcfg.scene.sample_rate,
                                                dcfg.scene.scene_seconds, Rng::derive(o.seed, "dataset/corpus").next());
  std::vector<std::array<std::vector<float>, 2>> h;
  for (const auto* row : m.split("train")) {
    const auto spec = room::room_from_json(nlohmann::json::parse(io::read_file(root / row->room_file)));
    Rng rng = Rng::derive(o.seed, "heldout/" + row->room_id);
    const auto pair = dataset::render_scene_pair(row->room_id, spec, corpus, rng, dcfg.scene);
    std::vector<Tensor<float>> x;
    for (const auto& s : pair.scenes) x.push_back(features::scene_to_tensor(s.audio, stats, pre.features));
    const auto e = encoder::embed_scenes(*trained.model, x);
    h.push_back({e[0], e[1]});
  }
  std::size_t closer = 0, total = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (int side = 0; side < 2; ++side) {
      const auto& anchor = h[i][side];
      const double pos = cosine(anchor, h[i][1 - side]);
      for (std::size_t j = 0; j < h.size(); ++j) {
        if (j == i) continue;
        closer += pos > cosine(anchor, h[j][1 - side]) ? 1 : 0;
        ++total;
      }
    }
  }
  const double rate = static_cast<double>(closer) / total;
  return {drop >= 0.30 && rate >= 0.80, "loss " + f(first) + " -> " + f(last) + " (" + f(100 * drop, 3) +
                                            "% drop in 20 epochs), held-out positive closer " + f(100 * rate, 3) +
                                            "% of " + std::to_string(total) + " comparisons"};
}

// ---- 11: generator memorization ---------------------------------------------------

Outcome generator_memorization(const Options& o) {
  const auto pre = pipeline::presets(pipeline::Scale::kDesk);
  const auto& sc = pre.dataset.scene;
  Rng rng = Rng::derive(o.seed, "memorize/rooms");
  const auto corpus = dataset::synthetic_corpus(6, sc.sample_rate, sc.scene_seconds, rng.next());
  Rng enc_init = Rng::derive(o.seed, "memorize/encoder");
  encoder::RoomEncoder<float> enc(pre.encoder, enc_init);  // frozen random features
  std::vector<diffusion::SrirItem> items;
  std::vector<Vec3> bearings;
  std::vector<analysis::Channels> truth;
  for (int r = 0; r < 4; ++r) {
    const auto drawn = dataset::draw_room(dataset::draw_rt_profile({}, rng), rng);
    const auto scene = dataset::render_scene(drawn.room, corpus, rng, sc);
    auto x = features::raw_features(scene.audio, pre.features.samples(), pre.features.stft);
    features::normalize_inplace(x, features::dataset_stats({x}));
    const auto h = encoder::embed_scenes(enc, {x});
    for (int p = 0; p < 4; ++p) {
      const Vec3 s = dataset::random_interior(drawn.room, rng), rc = dataset::random_interior(drawn.room, rng);
      const auto srir = dataset::normalize_align(
          room::simulate_srir(drawn.room, s, room::array_geometry(rc), sc.sim(rng.next())), true);
      items.push_back({"room" + std::to_string(r), h, diffusion::conditioning_vector(s, rc),
                       pipeline::srir_tensor(srir, pre.diffusion.length)});
      bearings.push_back((s - rc).normalized());
      truth.push_back(srir.samples);
    }
  }
  auto cfg = pre.diffusion;
  cfg.epochs = o.generator_epochs;
  cfg.lr = {3e-4, 1.0, 1};
  auto trained = diffusion::train_generator(items, {}, cfg, o.seed, [](const diffusion::GeneratorEpochLog& r) {
    if (r.epoch % 100 == 0) std::fprintf(stderr, "  [11] epoch %d loss %.2f\n", r.epoch, r.train_loss);
  });
  const double first = trained.log.front().train_loss, best = trained.log[trained.best_epoch - 1].train_loss;
  const auto arr = room::array_geometry(Vec3::Zero());
  Rng sampler = Rng::derive(o.seed, "memorize/sample");
  std::size_t ncc_ok = 0, doa_ok = 0;
  double ncc_min = 1, ncc_sum = 0, doa_worst = 0, truth_doa_worst = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto y = diffusion::sample_srir(*trained.model, items[k].h_options[0], items[k].v, 1,
                                         trained.model->config().s_churn, sampler);
    const auto gen = pipeline::generated_srir(y, 0, trained.model->config(), Vec3::Zero(), Vec3::Zero()).samples;
    const double ncc = analysis::best_lag_ncc(truth[k], gen, gen[0].size() - 1).ncc;
    double err = 180;
    try {
      err = analysis::great_circle_error(analysis::doa_direct(gen, cfg.sample_rate, arr), bearings[k]);
    } catch (const analysis::AnalysisError&) {
    }
    truth_doa_worst = std::max(
        truth_doa_worst, analysis::great_circle_error(analysis::doa_direct(truth[k], cfg.sample_rate, arr), bearings[k]));
    ncc_ok += ncc >= 0.9 ? 1 : 0;
    doa_ok += err <= 15 ? 1 : 0;
    ncc_min = std::min(ncc_min, ncc);
    ncc_sum += ncc;
    doa_worst = std::max(doa_worst, err);
  }
  const std::size_t n = items.size();
  return {ncc_ok == n && doa_ok == n,
          std::to_string(cfg.epochs) + " epochs, loss " + f(first) + " -> " + f(best) + "; NCC>=0.9 " +
              std::to_string(ncc_ok) + "/" + std::to_string(n) + " (mean " + f(ncc_sum / n, 3) + ", min " +
              f(ncc_min, 3) + "); DoA<=15deg " + std::to_string(doa_ok) + "/" + std::to_string(n) + " (worst " +
              f(doa_worst, 3) + ", ground truth worst " + f(truth_doa_worst, 3) + ")"};
}

// ---- 12: conditioning wiring ------------------------------------------------------

Outcome conditioning_wiring() {
  bool pass = true;
  std::string detail;
  for (auto variant : {diffusion::Variant::kProposed, diffusion::Variant::kConcatAll}) {
    diffusion::DiffusionConfig cfg;
    cfg.variant = variant;
    cfg.sigma_data = 0.12;
    cfg.length = 256;
    Rng rng(1212);
    diffusion::Generator<float> g(cfg, rng);
    const auto x = random_tensor<float>({1, 4, 256}, rng);
    const auto h1 = random_tensor<float>({1, cfg.h_dim}, rng), h2 = random_tensor<float>({1, cfg.h_dim}, rng);
    const auto v1 = random_tensor<float>({1, 3}, rng), v2 = random_tensor<float>({1, 3}, rng);
    auto capture = [&](const Tensor<float>& h, const Tensor<float>& v) {
      std::vector<diffusion::FilmRecord<float>> rec;
      typename diffusion::Generator<float>::State st;
      g.denoise(x, {0.5}, h, v, st, &rec);
      return rec;
    };
    const auto base = capture(h1, v1), dh = capture(h2, v1), dv = capture(h1, v2);
    std::size_t good = 0;
    const std::size_t width = variant == diffusion::Variant::kProposed ? 1024 : 1536;
    for (std::size_t i = 0; i < base.size(); ++i) {
      const bool h_moves = base[i].cond.storage() != dh[i].cond.storage();
      const bool v_moves = base[i].cond.storage() != dv[i].cond.storage();
      bool ok = base[i].cond.dim(1) == width;
      if (variant == diffusion::Variant::kProposed) {
        ok = ok && (base[i].role == diffusion::BlockRole::kDecoder ? (!h_moves && v_moves) : (h_moves && !v_moves));
      } else {
        ok = ok && h_moves && v_moves && base[i].cond.storage() == base[0].cond.storage();
      }
      good += ok ? 1 : 0;
    }
    pass = pass && good == base.size() && base.size() == 2 * cfg.unet.depth + 1;
    detail += (detail.empty() ? "" : ", ") + std::string(diffusion::variant_name(variant)) + " " +
              std::to_string(good) + "/" + std::to_string(base.size()) + " blocks as wired";
  }
  return {pass, detail};
}

// ---- 13: pipeline reproducibility -------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
  }
  return out;
}

Outcome pipeline_reproducibility(const Options& o) {
  if (o.cli.empty() || !fs::exists(o.cli)) return {false, "CLI binary not found: " + o.cli};
  const std::vector<std::string> steps = {
      "--seed 13 build-dataset --out ds --train-rooms 8 --val-rooms 2 --eval-rooms 1",
      "--seed 13 train-encoder --dataset ds --out enc.ckpt --epochs 1",
      "--seed 13 train-generator --dataset ds --encoder enc.ckpt --out gen.ckpt --epochs 1",
      "--seed 13 infer --dataset ds --model gen.ckpt --encoder enc.ckpt --out pred",
      "--seed 13 evaluate --pred pred --truth ds/eval --out report.csv",
  };
  std::array<std::map<std::string, std::string>, 2> trees;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = o.workdir / ("pipeline_run" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& s : steps) {
      const std::string cmd = "cd '" + dir.string() + "' && '" + o.cli + "' " + s + " > log.txt 2>&1";
      if (std::system(cmd.c_str()) != 0) return {false, "step failed: " + s};
    }
    fs::remove(dir / "log.txt");
    trees[run] = tree_bytes(dir);
  }
  std::size_t wav = 0, csv = 0, differ = 0;
  for (const auto& [name, bytes] : trees[0]) {
    wav += name.ends_with(".wav") ? 1 : 0;
    csv += name.ends_with(".csv") ? 1 : 0;
    const auto it = trees[1].find(name);
    differ += (it == trees[1].end() || it->second != bytes) ? 1 : 0;
  }
  differ += trees[1].size() != trees[0].size() ? 1 : 0;
  return {differ == 0 && wav > 0 && csv > 0, std::to_string(trees[0].size()) + " files (" + std::to_string(wav) +
                                                  " WAV, " + std::to_string(csv) + " CSV), " +
                                                  std::to_string(differ) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  openblas_set_num_threads(1);
  Options o;
  std::vector<int> only;
  CLI::App app{"Acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "srirgen_acceptance").string();
  app.add_option("--only", only, "Criterion numbers to run (default: all)")->delimiter(',');
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--cli", o.cli, "Path of the srirgen CLI")->default_str(SRIRGEN_CLI_PATH);
  app.add_option("--generator-epochs", o.generator_epochs, "Epoch budget of the memorization run");
  o.cli = SRIRGEN_CLI_PATH;
  CLI11_PARSE(app, argc, argv);
  o.workdir = workdir;
  fs::create_directories(o.workdir);

  struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "simulator geometry oracle", 60, geometry_oracle},
      {2, "Sabine consistency", 120, sabine_consistency},
      {3, "RT estimator", 30, rt_estimator},
      {4, "DRR estimator", 10, drr_estimator},
      {5, "DoA estimator", 60, doa_estimator},
      {6, "NT-Xent", 10, nt_xent_oracle},
      {7, "diffusion math", 5, diffusion_math},
      {8, "sampler statistics", 60, sampler_stats},
      {9, "gradients", 300, gradients},
      {10, "encoder training smoke", 900, [&] { return encoder_smoke(o); }},
      {11, "generator memorization", 2700, [&] { return generator_memorization(o); }},
      {12, "conditioning wiring", 5, conditioning_wiring},
      {13, "pipeline reproducibility", 600, [&] { return pipeline_reproducibility(o); }},
  };
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = out.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("criterion %2d %s: %s; %s [%.1f s of %.0f s%s]\n", c.id, c.title, pass ? "PASS" : "FAIL",
                out.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
