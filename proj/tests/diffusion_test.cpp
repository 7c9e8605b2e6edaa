#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "srirgen/core/gradcheck.hpp"
#include "srirgen/diffusion/train.hpp"

using namespace srirgen;
using namespace srirgen::diffusion;

namespace {

DiffusionConfig small_config(Variant variant = Variant::kProposed) {
  DiffusionConfig c;
  c.variant = variant;
  c.unet.depth = 2;
  c.unet.base_channels = 4;
  c.cond = {8, 8, 8};
  c.rff_dim = 8;
  c.h_dim = 4;
  c.length = 16;
  c.sigma_data = 0.2;
  return c;
}

// Parameters that start at zero give a degenerate finite-difference check.
void randomize_zero_params(const std::vector<Param<double>*>& ps, Rng& rng) {
  for (auto* p : ps) {
    if (std::all_of(p->value.begin(), p->value.end(), [](double v) { return v == 0.0; })) {
      for (auto& v : p->value) v = rng.normal(0.0, 0.1);
    }
  }
}

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

double std_of(const Tensor<double>& x) {
  double m = 0, q = 0;
  for (double v : x) m += v;
  m /= x.size();
  for (double v : x) q += (v - m) * (v - m);
  return std::sqrt(q / x.size());
}

}  // namespace

TEST(Schedule, EndpointsAndMonotone) {
  DiffusionConfig c;
  const auto t = noise_schedule(c);
  ASSERT_EQ(t.size(), 35u);
  EXPECT_EQ(t.front(), 10.0);
  EXPECT_EQ(t.back(), 1e-6);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LT(t[i], t[i - 1]);
  // Interior points follow the rho-spaced interpolation.
  for (int i = 1; i < 34; ++i) {
    const double a = std::pow(10.0, 0.1), b = std::pow(1e-6, 0.1);
    EXPECT_NEAR(t[i], std::pow(a + i / 34.0 * (b - a), 10.0), 1e-12 * t[i]);
  }
}

TEST(Preconditioning, LossWeightCancelsOutputScale) {
  const double sd = 0.37;
  for (int i = 0; i < 20; ++i) {
    const double sigma = std::pow(10.0, -6.0 + 7.0 * i / 19.0);
    const auto p = precondition_coeffs(sigma, sd);
    EXPECT_NEAR(p.lambda * p.c_out * p.c_out, 1.0, 1e-12) << sigma;
    EXPECT_NEAR(p.c_skip + p.c_out * p.c_out / (sd * sd), 1.0, 1e-12);
  }
  const auto p = precondition_coeffs(sd, sd);
  EXPECT_DOUBLE_EQ(p.c_skip, 0.5);
  EXPECT_DOUBLE_EQ(p.c_in, 1.0 / (sd * std::sqrt(2.0)));
  EXPECT_THROW(precondition_coeffs(0.0, sd), std::invalid_argument);
}

TEST(Preconditioning, UntrainedNetworkReturnsSkipTerm) {
  auto cfg = small_config();
  Rng rng(3);
  Generator<float> g(cfg, rng);
  const auto x = random_tensor<float>({2, 4, 16}, rng);
  const auto h = random_tensor<float>({2, 4}, rng);
  const auto v = random_tensor<float>({2, 3}, rng);
  const std::vector<double> sigma{0.05, 3.0};
  typename Generator<float>::State st;
  const auto d = g.denoise(x, sigma, h, v, st);
  for (std::size_t b = 0; b < 2; ++b) {
    const double c_skip = precondition_coeffs(sigma[b], cfg.sigma_data).c_skip;
    for (std::size_t i = 0; i < 64; ++i) {
      ASSERT_EQ(d[b * 64 + i], static_cast<float>(c_skip * x[b * 64 + i]));
    }
  }
}

TEST(Preconditioning, LearnedFlagRejected) {
  auto cfg = small_config();
  cfg.preconditioning = "learned";
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SigmaDraw, MedianAndClamp) {
  DiffusionConfig c;
  Rng rng(5);
  std::vector<double> s(20000);
  for (auto& v : s) v = sigma_draw(rng, c);
  std::nth_element(s.begin(), s.begin() + 10000, s.end());
  EXPECT_NEAR(s[10000], std::exp(-1.2), 0.05 * std::exp(-1.2));
  EXPECT_GE(*std::min_element(s.begin(), s.end()), c.sigma_min);
  EXPECT_LE(*std::max_element(s.begin(), s.end()), c.sigma_max);
}

TEST(Sampler, GaussianDataRecoversStd) {
  // For x0 ~ N(0, sd^2) the ideal denoiser is x * sd^2 / (sd^2 + sigma^2).
  DiffusionConfig c;
  const double sd = 0.5;
  auto ideal = [&](const Tensor<double>& x, double sigma) {
    Tensor<double> d(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] * sd * sd / (sd * sd + sigma * sigma);
    return d;
  };
  for (double churn : {0.0, 1.0}) {
    Rng rng(17);
    std::size_t evals = 0;
    const auto x = sample<double>(ideal, {10000}, c, churn, rng, &evals);
    EXPECT_NEAR(std_of(x), sd, 0.05 * sd) << "churn " << churn;
    EXPECT_EQ(evals, 2u * 35u - 1u);
  }
}

TEST(Unet, PoolAndUpsampleAreAdjoint) {
  Rng rng(2);
  const auto x = random_tensor<double>({2, 3, 8}, rng);
  const auto y = random_tensor<double>({2, 3, 4}, rng);
  // <pool(x), y> == <x, pool^T(y)>, same for upsampling.
  auto inner = [](const Tensor<double>& a, const Tensor<double>& b) { return dot(a.values(), b.values()); };
  EXPECT_NEAR(inner(avgpool2(x), y), inner(x, avgpool2_backward(y)), 1e-12);
  EXPECT_NEAR(inner(upsample2(y), x), inner(y, upsample2_backward(x)), 1e-12);
  const auto p = avgpool2(x);
  EXPECT_DOUBLE_EQ(p[0], 0.5 * (x[0] + x[1]));
  const auto u = upsample2(y);
  EXPECT_EQ(u[6], y[3]);
  EXPECT_EQ(u[7], y[3]);
}

TEST(Unet, RejectsUnpaddedLength) {
  auto cfg = small_config();
  Rng rng(1);
  Generator<float> g(cfg, rng);
  typename Generator<float>::State st;
  Tensor<float> x({1, 4, 18}), h({1, 4}), v({1, 3});
  try {
    g.denoise(x, {1.0}, h, v, st);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(Unet, SampleSrirTrimsPadding) {
  auto cfg = small_config();
  cfg.length = 18;
  cfg.steps = 3;
  Rng rng(1);
  Generator<float> g(cfg, rng);
  Rng srng(4);
  const auto y = sample_srir(g, std::vector<float>(4, 0.1f), {0.1, 0.2, 0.3}, 2, 1.0, srng);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 18}));
  EXPECT_TRUE(y.all_finite());
}

TEST(GradCheck, ResBlockWithChannelChange) {
  UnetConfig u;
  Rng rng(8);
  ResBlock1d<double> block("rb", 6, 4, 5, u, rng);
  randomize_zero_params(block.params(), rng);
  auto x = random_tensor<double>({2, 6, 12}, rng);
  auto c = random_tensor<double>({2, 5}, rng);
  typename ResBlock1d<double>::State st;
  GradCheckTarget t;
  t.inputs = {&x, &c};
  t.params = block.params();
  t.forward = [&] { return block.forward(x, c, st); };
  t.backward = [&](const Tensor<double>& g) {
    auto [gx, gc] = block.backward(st, g);
    return std::vector<Tensor<double>>{gx, gc};
  };
  const auto rep = grad_check_report(t, 1e-6);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst;
}

TEST(GradCheck, ConditioningMlp) {
  Rng rng(9);
  CondMlp<double> mlp("m", 5, {6, 7, 8}, rng);
  auto x = random_tensor<double>({3, 5}, rng);
  typename CondMlp<double>::State st;
  GradCheckTarget t;
  t.inputs = {&x};
  t.params = mlp.params();
  t.forward = [&] { return mlp.forward(x, st); };
  t.backward = [&](const Tensor<double>& g) { return std::vector<Tensor<double>>{mlp.backward(st, g)}; };
  const auto rep = grad_check_report(t, 1e-6);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst;
}

TEST(GradCheck, UnetLayers) {
  UnetConfig u;
  u.depth = 2;
  u.base_channels = 3;
  Rng rng(10);
  Unet<double> net(u, 4, 5, 6, rng);
  randomize_zero_params(net.params(), rng);
  auto x = random_tensor<double>({2, 4, 8}, rng, 0.5);
  auto ce = random_tensor<double>({2, 5}, rng);
  auto cd = random_tensor<double>({2, 6}, rng);
  typename Unet<double>::State st;
  GradCheckTarget t;
  t.inputs = {&x, &ce, &cd};
  t.params = net.params();
  t.forward = [&] { return net.forward(x, ce, cd, st); };
  t.backward = [&](const Tensor<double>& g) {
    auto [gx, ge, gd] = net.backward(st, g);
    return std::vector<Tensor<double>>{gx, ge, gd};
  };
  const auto rep = grad_check_report(t, 1e-6);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst;
}

TEST(GradCheck, DenoiserEndToEnd) {
  for (Variant variant : {Variant::kProposed, Variant::kConcatAll}) {
    auto cfg = small_config(variant);
    cfg.unet.base_channels = 8;
    cfg.length = 256;
    Rng rng(12);
    Generator<double> g(cfg, rng);
    randomize_zero_params(g.params(), rng);
    auto x0 = random_tensor<double>({2, 4, 256}, rng, 0.2);
    auto h = random_tensor<double>({2, 4}, rng);
    auto v = random_tensor<double>({2, 3}, rng);
    const std::vector<double> sigma{0.3, 2.0};
    GradCheckTarget t;
    t.params = g.params();
    t.forward = [&] {
      Rng noise(99);
      return Tensor<double>({1}, training_loss(g, x0, h, v, noise, false, &sigma).loss);
    };
    t.backward = [&](const Tensor<double>& up) {
      Rng noise(99);
      training_loss(g, x0, h, v, noise, true, &sigma);
      for (auto* p : g.params()) p->grad *= up[0];
      return std::vector<Tensor<double>>{};
    };
    const auto rep = grad_check_report(t, 1e-6, 7, 5);
    EXPECT_LT(rep.max_relative_error, 1e-3) << variant_name(variant) << " " << rep.worst;
  }
}

TEST(GradCheck, DenoiserConditioningInputs) {
  auto cfg = small_config();
  Rng rng(13);
  Generator<double> g(cfg, rng);
  randomize_zero_params(g.params(), rng);
  auto x = random_tensor<double>({2, 4, 16}, rng);
  auto h = random_tensor<double>({2, 4}, rng);
  auto v = random_tensor<double>({2, 3}, rng);
  const std::vector<double> sigma{0.1, 1.5};
  typename Generator<double>::State st;
  GradCheckTarget t;
  t.inputs = {&x, &h, &v};
  t.forward = [&] { return g.denoise(x, sigma, h, v, st); };
  t.backward = [&](const Tensor<double>& up) {
    auto gr = g.backward(st, up);
    return std::vector<Tensor<double>>{gr.x, gr.h, gr.v};
  };
  const auto rep = grad_check_report(t, 1e-6);
  EXPECT_LT(rep.max_relative_error, 1e-3) << rep.worst;
}

TEST(Wiring, ProposedSplitsRoomAndPosition) {
  DiffusionConfig cfg = small_config(Variant::kProposed);
  cfg.cond = {};
  Rng rng(21);
  Generator<float> g(cfg, rng);
  const auto x = random_tensor<float>({1, 4, 16}, rng);
  const auto h1 = random_tensor<float>({1, 4}, rng), h2 = random_tensor<float>({1, 4}, rng);
  const auto v1 = random_tensor<float>({1, 3}, rng), v2 = random_tensor<float>({1, 3}, rng);
  auto capture = [&](const Tensor<float>& h, const Tensor<float>& v) {
    std::vector<FilmRecord<float>> rec;
    typename Generator<float>::State st;
    g.denoise(x, {0.5}, h, v, st, &rec);
    return rec;
  };
  const auto base = capture(h1, v1), dh = capture(h2, v1), dv = capture(h1, v2);
  ASSERT_EQ(base.size(), 2 * cfg.unet.depth + 1);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(base[i].cond.dim(1), 1024u);
    const bool h_moves = base[i].cond.storage() != dh[i].cond.storage();
    const bool v_moves = base[i].cond.storage() != dv[i].cond.storage();
    if (base[i].role == BlockRole::kDecoder) {
      EXPECT_FALSE(h_moves) << base[i].block;
      EXPECT_TRUE(v_moves) << base[i].block;
    } else {
      EXPECT_TRUE(h_moves) << base[i].block;
      EXPECT_FALSE(v_moves) << base[i].block;
    }
  }
}

TEST(Wiring, ConcatAllFeedsEverything) {
  DiffusionConfig cfg = small_config(Variant::kConcatAll);
  cfg.cond = {};
  Rng rng(22);
  Generator<float> g(cfg, rng);
  const auto x = random_tensor<float>({1, 4, 16}, rng);
  const auto h1 = random_tensor<float>({1, 4}, rng), h2 = random_tensor<float>({1, 4}, rng);
  const auto v1 = random_tensor<float>({1, 3}, rng), v2 = random_tensor<float>({1, 3}, rng);
  auto capture = [&](const Tensor<float>& h, const Tensor<float>& v) {
    std::vector<FilmRecord<float>> rec;
    typename Generator<float>::State st;
    g.denoise(x, {0.5}, h, v, st, &rec);
    return rec;
  };
  const auto base = capture(h1, v1), dh = capture(h2, v1), dv = capture(h1, v2);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(base[i].cond.dim(1), 1536u);
    EXPECT_EQ(base[i].cond.storage(), base[0].cond.storage());
    EXPECT_NE(base[i].cond.storage(), dh[i].cond.storage());
    EXPECT_NE(base[i].cond.storage(), dv[i].cond.storage());
  }
  EXPECT_EQ(small_config(Variant::kWithToa).cond_dim(), small_config(Variant::kProposed).cond_dim());
}

TEST(Loss, RejectsUnnormalizedTargets) {
  auto cfg = small_config();
  Rng rng(1);
  Generator<float> g(cfg, rng);
  Tensor<float> x0({1, 4, 16}), h({1, 4}), v({1, 3});
  x0[5] = 1.5f;
  EXPECT_THROW(training_loss(g, x0, h, v, rng), std::invalid_argument);
}

TEST(Training, LossFallsDeterministicAndRoundTrips) {
  auto cfg = small_config();
  cfg.sigma_data = 0;
  cfg.epochs = 12;
  cfg.batch_size = 4;
  cfg.lr = {3e-3, 0.8, 10};
  Rng rng(30);
  std::vector<SrirItem> train;
  for (int r = 0; r < 8; ++r) {
    SrirItem it;
    it.room_id = "r" + std::to_string(r);
    it.h_options = {std::vector<float>(4, 0.1f * r), std::vector<float>(4, -0.1f * r)};
    it.v = {0.1 * r, 0.0, 0.2};
    it.x0 = Tensor<float>({4, 16});
    for (std::size_t i = 0; i < it.x0.size(); ++i) it.x0[i] = static_cast<float>(0.5 * std::sin(0.3 * i + r));
    train.push_back(std::move(it));
  }
  const auto a = train_generator(train, {}, cfg, 5);
  const auto b = train_generator(train, {}, cfg, 5);
  ASSERT_EQ(a.log.size(), 12u);
  EXPECT_NEAR(a.model->config().sigma_data, estimate_sigma_data(train), 1e-12);
  for (std::size_t e = 0; e < a.log.size(); ++e) EXPECT_EQ(a.log[e].train_loss, b.log[e].train_loss);
  double early = 0, late = 0;
  for (int e = 0; e < 3; ++e) early += a.log[e].train_loss;
  for (int e = 9; e < 12; ++e) late += a.log[e].train_loss;
  EXPECT_LT(late, early);

  const auto path = std::filesystem::temp_directory_path() / "srirgen_generator_test.ckpt";
  save_generator(path, *a.model);
  auto loaded = load_generator(path);
  std::filesystem::remove(path);
  Tensor<float> x({1, 4, 16}, 0.3f), h({1, 4}, 0.2f), v({1, 3}, 0.1f);
  typename Generator<float>::State s1, s2;
  EXPECT_EQ(a.model->denoise(x, {0.7}, h, v, s1).storage(), loaded.model->denoise(x, {0.7}, h, v, s2).storage());
  EXPECT_EQ(loaded.model->config().sigma_data, a.model->config().sigma_data);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = small_config(Variant::kWithToa);
  cfg.s_churn = 0.5;
  const auto back = diffusion_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_THROW(parse_variant("film-everywhere"), ConfigError);
}
