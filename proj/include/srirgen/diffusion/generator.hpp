#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "srirgen/diffusion/edm.hpp"
#include "srirgen/diffusion/unet.hpp"

namespace srirgen::diffusion {

// Preconditioned denoiser D(x; sigma, h, v) = c_skip x + c_out F(c_in x; ...).
template <typename T>
class Generator {
 public:
  struct State {
    typename CondMlp<T>::State noise, h, v;
    typename Unet<T>::State unet;
    std::vector<Preconditioning> pc;
    std::size_t x_shape_n = 0;
  };

  struct Grads {
    Tensor<T> x, h, v;
  };

  Generator(const DiffusionConfig& cfg, Rng& rng)
      : cfg_(cfg),
        rff_(cfg.rff_dim, cfg.rff_scale, rng),
        noise_mlp_("cond.noise", cfg.rff_dim, cfg.cond, rng),
        h_mlp_("cond.h", cfg.h_dim, cfg.cond, rng),
        v_mlp_("cond.v", 3, cfg.cond, rng),
        unet_(cfg.unet, cfg.channels, cfg.cond_dim(), cfg.cond_dim(), rng),
        rff_freq_("rff.freq", rff_.freq.template cast<T>()),
        rff_phase_("rff.phase", rff_.phase.template cast<T>()) {
    cfg_.validate(/*need_sigma_data=*/false);
  }

  const DiffusionConfig& config() const { return cfg_; }
  DiffusionConfig& config() { return cfg_; }
  Unet<T>& unet() { return unet_; }

  // x: (N, C, L); sigma: N levels; h: (N, h_dim); v: (N, 3).
  Tensor<T> denoise(const Tensor<T>& x, const std::vector<double>& sigma, const Tensor<T>& h, const Tensor<T>& v,
                    State& st, std::vector<FilmRecord<T>>* capture = nullptr) {
    const std::size_t n = x.dim(0);
    if (x.ndim() != 3 || x.dim(1) != cfg_.channels) {
      throw ShapeError("generator: expected (N, " + std::to_string(cfg_.channels) + ", L), got " +
                       shape_string(x.shape()));
    }
    if (sigma.size() != n || h.ndim() != 2 || h.dim(0) != n || h.dim(1) != cfg_.h_dim || v.ndim() != 2 ||
        v.dim(0) != n || v.dim(1) != 3) {
      throw ShapeError("generator: conditioning shapes h " + shape_string(h.shape()) + ", v " +
                       shape_string(v.shape()) + " do not match batch " + std::to_string(n));
    }
    if (!(cfg_.sigma_data > 0)) throw ConfigError("generator: sigma_data is not set");
    sync_rff();
    st.pc.clear();
    for (double s : sigma) st.pc.push_back(precondition_coeffs(s, cfg_.sigma_data));
    const std::size_t inner = x.size() / n;
    Tensor<T> xin(x.shape());
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < inner; ++i) xin[b * inner + i] = static_cast<T>(st.pc[b].c_in * x[b * inner + i]);
    }
    const Tensor<T> e_noise = noise_mlp_.forward(rff_.template embed<T>(sigma), st.noise);
    const Tensor<T> e_h = h_mlp_.forward(h, st.h);
    const Tensor<T> e_v = v_mlp_.forward(v, st.v);
    Tensor<T> enc, dec;
    if (cfg_.variant == Variant::kConcatAll) {
      enc = concat_channels(concat_channels(e_noise, e_h), e_v);
      dec = enc;
    } else {
      enc = concat_channels(e_noise, e_h);
      dec = concat_channels(e_noise, e_v);
    }
    const Tensor<T> f = unet_.forward(xin, enc, dec, st.unet, capture);
    Tensor<T> d(x.shape());
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = b * inner + i;
        d[k] = static_cast<T>(st.pc[b].c_skip * x[k] + st.pc[b].c_out * f[k]);
      }
    }
    return d;
  }

  // Accumulates parameter gradients for upstream gradient gd = dL/dD.
  Grads backward(const State& st, const Tensor<T>& gd) {
    const std::size_t n = gd.dim(0), inner = gd.size() / n;
    Tensor<T> gf(gd.shape());
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < inner; ++i) gf[b * inner + i] = static_cast<T>(st.pc[b].c_out * gd[b * inner + i]);
    }
    auto [gxin, g_enc, g_dec] = unet_.backward(st.unet, gf);
    Grads out;
    out.x = Tensor<T>(gd.shape());
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = b * inner + i;
        out.x[k] = static_cast<T>(st.pc[b].c_skip * gd[k] + st.pc[b].c_in * gxin[k]);
      }
    }
    const std::size_t e = cfg_.cond.out;
    Tensor<T> g_noise, g_h, g_v;
    if (cfg_.variant == Variant::kConcatAll) {
      Tensor<T> g = g_enc;
      g += g_dec;
      auto [g_nh, gv] = split_channels(g, 2 * e);
      auto [gn, gh] = split_channels(g_nh, e);
      g_noise = std::move(gn);
      g_h = std::move(gh);
      g_v = std::move(gv);
    } else {
      auto [gn1, gh] = split_channels(g_enc, e);
      auto [gn2, gv] = split_channels(g_dec, e);
      g_noise = std::move(gn1);
      g_noise += gn2;
      g_h = std::move(gh);
      g_v = std::move(gv);
    }
    noise_mlp_.backward(st.noise, g_noise);
    out.h = h_mlp_.backward(st.h, g_h);
    out.v = v_mlp_.backward(st.v, g_v);
    return out;
  }

  // Trainable parameters. The Fourier features are fixed.
  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    auto add = [&](std::vector<Param<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
    add(noise_mlp_.params());
    add(h_mlp_.params());
    add(v_mlp_.params());
    add(unet_.params());
    return out;
  }

  // Everything a checkpoint must hold.
  std::vector<Param<T>*> state_tensors() {
    auto out = params();
    out.push_back(&rff_freq_);
    out.push_back(&rff_phase_);
    return out;
  }

 private:
  // The Fourier tables live in Params so checkpoints can restore them.
  void sync_rff() {
    for (std::size_t k = 0; k < rff_.freq.size(); ++k) {
      rff_.freq[k] = static_cast<float>(rff_freq_.value[k]);
      rff_.phase[k] = static_cast<float>(rff_phase_.value[k]);
    }
  }

  DiffusionConfig cfg_;
  FourierFeatures rff_;
  CondMlp<T> noise_mlp_, h_mlp_, v_mlp_;
  Unet<T> unet_;
  Param<T> rff_freq_, rff_phase_;
};

struct LossStep {
  double loss = 0;
  std::vector<double> sigma;
};

// One denoising-loss evaluation on a batch of clean targets x0 (N, C, L):
// x = x0 + sigma * eps, loss = mean over the batch of lambda(sigma) * ||D - x0||^2.
// With `backward` set, parameter gradients are accumulated.
template <typename T>
LossStep training_loss(Generator<T>& g, const Tensor<T>& x0, const Tensor<T>& h, const Tensor<T>& v, Rng& rng,
                       bool backward = true, const std::vector<double>* fixed_sigma = nullptr) {
  const auto& cfg = g.config();
  const std::size_t n = x0.dim(0), inner = x0.size() / n;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!(std::abs(static_cast<double>(x0[i])) <= 1.0 + 1e-6)) {
      throw std::invalid_argument("training_loss: target sample " + std::to_string(i) +
                                  " has magnitude above 1; normalize targets first");
    }
  }
  LossStep out;
  if (fixed_sigma) {
    out.sigma = *fixed_sigma;
  } else {
    for (std::size_t b = 0; b < n; ++b) out.sigma.push_back(sigma_draw(rng, cfg));
  }
  Tensor<T> x(x0.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < inner; ++i) {
      x[b * inner + i] = static_cast<T>(x0[b * inner + i] + out.sigma[b] * rng.normal());
    }
  }
  typename Generator<T>::State st;
  const Tensor<T> d = g.denoise(x, out.sigma, h, v, st);
  Tensor<T> gd(d.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const double lambda = st.pc[b].lambda;
    double sq = 0;
    for (std::size_t i = 0; i < inner; ++i) {
      const double r = static_cast<double>(d[b * inner + i]) - x0[b * inner + i];
      sq += r * r;
      gd[b * inner + i] = static_cast<T>(2.0 * lambda * r / static_cast<double>(n));
    }
    out.loss += lambda * sq / static_cast<double>(n);
  }
  if (backward) g.backward(st, gd);
  return out;
}

struct SamplerConfig {
  double s_churn = 1.0;
};

// Stochastic sampler with churn and a second-order correction. `denoise`
// maps (x, sigma) to D(x; sigma). Starts from sigma_max * noise and visits
// every level of the schedule before stepping to 0.
template <typename T>
Tensor<T> sample(const std::function<Tensor<T>(const Tensor<T>&, double)>& denoise, const Shape& shape,
                 const DiffusionConfig& cfg, double s_churn, Rng& rng, std::size_t* evaluations = nullptr) {
  if (s_churn < 0) throw std::invalid_argument("sample: s_churn must be >= 0");
  std::vector<double> levels = noise_schedule(cfg);
  const std::size_t steps = levels.size();
  levels.push_back(0.0);
  const double gamma = s_churn > 0 ? std::min(s_churn / static_cast<double>(steps), std::sqrt(2.0) - 1.0) : 0.0;
  Tensor<T> x(shape);
  for (auto& e : x) e = static_cast<T>(levels[0] * rng.normal());
  std::size_t evals = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double s = levels[i], s_next = levels[i + 1];
    const double s_hat = s * (1.0 + gamma);
    Tensor<T> x_hat = x;
    if (gamma > 0) {
      const double extra = std::sqrt(s_hat * s_hat - s * s);
      for (auto& e : x_hat) e = static_cast<T>(e + extra * rng.normal());
    }
    const Tensor<T> d_hat = denoise(x_hat, s_hat);
    ++evals;
    Tensor<T> slope(shape), x_next(shape);
    for (std::size_t k = 0; k < x.size(); ++k) {
      slope[k] = static_cast<T>((x_hat[k] - d_hat[k]) / s_hat);
      x_next[k] = static_cast<T>(x_hat[k] + (s_next - s_hat) * slope[k]);
    }
    if (s_next > 0) {
      const Tensor<T> d_next = denoise(x_next, s_next);
      ++evals;
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double slope2 = (x_next[k] - d_next[k]) / s_next;
        x_next[k] = static_cast<T>(x_hat[k] + (s_next - s_hat) * 0.5 * (slope[k] + slope2));
      }
    }
    x = std::move(x_next);
  }
  if (evaluations) *evaluations = evals;
  return x;
}

// Draws `count` SRIRs of cfg.length samples for one conditioning pair. The
// length is padded up to a multiple of 2^depth for the network and trimmed
// afterwards.
template <typename T>
Tensor<T> sample_srir(Generator<T>& g, const std::vector<float>& h, const std::array<double, 3>& v, std::size_t count,
                      double s_churn, Rng& rng) {
  const auto& cfg = g.config();
  if (h.size() != cfg.h_dim) {
    throw ShapeError("sample_srir: h has " + std::to_string(h.size()) + " values, expected " +
                     std::to_string(cfg.h_dim));
  }
  const std::size_t padded = cfg.padded_length();
  Tensor<T> hb({count, cfg.h_dim}), vb({count, 3});
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t k = 0; k < cfg.h_dim; ++k) hb[b * cfg.h_dim + k] = static_cast<T>(h[k]);
    for (std::size_t k = 0; k < 3; ++k) vb[b * 3 + k] = static_cast<T>(v[k]);
  }
  auto den = [&](const Tensor<T>& x, double sigma) {
    typename Generator<T>::State st;
    return g.denoise(x, std::vector<double>(count, sigma), hb, vb, st);
  };
  const Tensor<T> full = sample<T>(den, {count, cfg.channels, padded}, cfg, s_churn, rng);
  if (padded == cfg.length) return full;
  Tensor<T> out({count, cfg.channels, cfg.length});
  for (std::size_t r = 0; r < count * cfg.channels; ++r) {
    std::copy_n(full.data() + r * padded, cfg.length, out.data() + r * cfg.length);
  }
  return out;
}

}  // namespace srirgen::diffusion
