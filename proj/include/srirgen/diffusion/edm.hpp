#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "srirgen/core/layers.hpp"
#include "srirgen/core/optim.hpp"
#include "srirgen/room/geometry.hpp"

namespace srirgen::diffusion {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant { kProposed, kConcatAll, kWithToa };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kProposed: return "proposed";
    case Variant::kConcatAll: return "concat-all";
    case Variant::kWithToa: return "with-toa";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "proposed") return Variant::kProposed;
  if (s == "concat-all") return Variant::kConcatAll;
  if (s == "with-toa") return Variant::kWithToa;
  throw ConfigError("unknown variant '" + s + "' (expected proposed, concat-all or with-toa)");
}

// Whether training targets have their direct arrival moved to the fixed align lead.
inline bool variant_aligned(Variant v) { return v != Variant::kWithToa; }

struct UnetConfig {
  std::size_t depth = 4;
  std::size_t base_channels = 32;
  std::size_t dilation_stack = 3;
  std::size_t kernel = 3;

  std::vector<std::size_t> dilations() const {
    std::vector<std::size_t> d;
    for (std::size_t k = 0; k < dilation_stack; ++k) d.push_back(std::size_t{1} << k);
    return d;
  }
};

struct CondMlpConfig {
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 256;
  std::size_t out = 512;
};

struct DiffusionConfig {
  double sigma_min = 1e-6;
  double sigma_max = 10.0;
  double rho = 10.0;
  int steps = 35;
  double s_churn = 1.0;
  double sigma_data = 0.0;  // estimated from training data when <= 0
  Variant variant = Variant::kProposed;
  UnetConfig unet;
  CondMlpConfig cond;
  std::size_t rff_dim = 64;
  double rff_scale = 16.0;
  std::size_t h_dim = 32;
  std::size_t channels = 4;
  double sample_rate = 8000;
  std::size_t length = 2000;  // samples per SRIR, before padding
  double p_mean = -1.2;
  double p_std = 1.2;
  std::string preconditioning = "analytic";
  // Training.
  int epochs = 300;
  std::size_t batch_size = 8;
  LrSchedule lr{3e-4, 0.8, 10};

  std::size_t cond_dim() const { return (variant == Variant::kConcatAll ? 3 : 2) * cond.out; }

  // Network length: `length` rounded up to a multiple of 2^depth.
  std::size_t padded_length() const {
    const std::size_t m = std::size_t{1} << unet.depth;
    return (length + m - 1) / m * m;
  }

  void validate(bool need_sigma_data = true) const {
    if (!(sigma_min > 0 && sigma_min < sigma_max)) throw ConfigError("diffusion: need 0 < sigma_min < sigma_max");
    if (steps < 2) throw ConfigError("diffusion: steps must be >= 2");
    if (!(rho > 0)) throw ConfigError("diffusion: rho must be positive");
    if (s_churn < 0) throw ConfigError("diffusion: s_churn must be >= 0");
    if (need_sigma_data && !(sigma_data > 0)) throw ConfigError("diffusion: sigma_data must be positive");
    if (unet.depth < 1 || unet.base_channels == 0 || unet.dilation_stack == 0 || unet.kernel % 2 == 0) {
      throw ConfigError("diffusion: invalid u-net shape");
    }
    if (preconditioning != "analytic") {
      throw ConfigError("diffusion: preconditioning '" + preconditioning + "' is not supported (analytic only)");
    }
    if (length == 0 || channels == 0 || h_dim == 0 || rff_dim == 0) throw ConfigError("diffusion: zero extent");
  }
};

inline nlohmann::json to_json(const DiffusionConfig& c) {
  return {{"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max},
          {"rho", c.rho},
          {"steps", c.steps},
          {"s_churn", c.s_churn},
          {"sigma_data", c.sigma_data},
          {"variant", variant_name(c.variant)},
          {"unet",
           {{"depth", c.unet.depth},
            {"base_channels", c.unet.base_channels},
            {"dilation_stack", c.unet.dilation_stack},
            {"kernel", c.unet.kernel}}},
          {"cond_mlp", {c.cond.hidden1, c.cond.hidden2, c.cond.out}},
          {"rff_dim", c.rff_dim},
          {"rff_scale", c.rff_scale},
          {"h_dim", c.h_dim},
          {"channels", c.channels},
          {"sample_rate", c.sample_rate},
          {"length", c.length},
          {"p_mean", c.p_mean},
          {"p_std", c.p_std},
          {"preconditioning", c.preconditioning},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_initial", c.lr.initial},
          {"lr_factor", c.lr.factor},
          {"lr_every", c.lr.every_n_epochs}};
}

inline DiffusionConfig diffusion_config_from_json(const nlohmann::json& j) {
  DiffusionConfig c;
  c.sigma_min = j.value("sigma_min", c.sigma_min);
  c.sigma_max = j.value("sigma_max", c.sigma_max);
  c.rho = j.value("rho", c.rho);
  c.steps = j.value("steps", c.steps);
  c.s_churn = j.value("s_churn", c.s_churn);
  c.sigma_data = j.value("sigma_data", c.sigma_data);
  c.variant = parse_variant(j.value("variant", std::string("proposed")));
  if (j.contains("unet")) {
    const auto& u = j.at("unet");
    c.unet.depth = u.value("depth", c.unet.depth);
    c.unet.base_channels = u.value("base_channels", c.unet.base_channels);
    c.unet.dilation_stack = u.value("dilation_stack", c.unet.dilation_stack);
    c.unet.kernel = u.value("kernel", c.unet.kernel);
  }
  if (j.contains("cond_mlp")) {
    const auto v = j.at("cond_mlp").get<std::vector<std::size_t>>();
    if (v.size() != 3) throw ConfigError("diffusion: cond_mlp needs 3 sizes");
    c.cond = {v[0], v[1], v[2]};
  }
  c.rff_dim = j.value("rff_dim", c.rff_dim);
  c.rff_scale = j.value("rff_scale", c.rff_scale);
  c.h_dim = j.value("h_dim", c.h_dim);
  c.channels = j.value("channels", c.channels);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.length = j.value("length", c.length);
  c.p_mean = j.value("p_mean", c.p_mean);
  c.p_std = j.value("p_std", c.p_std);
  c.preconditioning = j.value("preconditioning", c.preconditioning);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr.initial = j.value("lr_initial", c.lr.initial);
  c.lr.factor = j.value("lr_factor", c.lr.factor);
  c.lr.every_n_epochs = j.value("lr_every", c.lr.every_n_epochs);
  return c;
}

struct Preconditioning {
  double c_skip, c_out, c_in, lambda;
};

inline Preconditioning precondition_coeffs(double sigma, double sigma_data) {
  if (!(sigma > 0)) throw std::invalid_argument("precondition_coeffs: sigma must be positive");
  const double s2 = sigma * sigma, d2 = sigma_data * sigma_data, r = std::sqrt(s2 + d2);
  const double c_out = sigma * sigma_data / r;
  return {d2 / (s2 + d2), c_out, 1.0 / r, 1.0 / (c_out * c_out)};
}

// Decreasing noise levels, sigma_max first and sigma_min last.
inline std::vector<double> noise_schedule(const DiffusionConfig& c) {
  const double a = std::pow(c.sigma_max, 1.0 / c.rho), b = std::pow(c.sigma_min, 1.0 / c.rho);
  std::vector<double> t(static_cast<std::size_t>(c.steps));
  for (int i = 0; i < c.steps; ++i) t[i] = std::pow(a + i / static_cast<double>(c.steps - 1) * (b - a), c.rho);
  t.front() = c.sigma_max;
  t.back() = c.sigma_min;
  return t;
}

inline double sigma_draw(Rng& rng, const DiffusionConfig& c) {
  return std::clamp(std::exp(rng.normal(c.p_mean, c.p_std)), c.sigma_min, c.sigma_max);
}

// Fixed random Fourier features of u = ln(sigma) / 4.
struct FourierFeatures {
  Tensor<float> freq;   // standard normal times rff_scale
  Tensor<float> phase;  // uniform in [0, 2 pi)

  FourierFeatures() = default;
  FourierFeatures(std::size_t dim, double scale, Rng& rng) : freq({dim}), phase({dim}) {
    for (auto& w : freq) w = static_cast<float>(rng.normal() * scale);
    for (auto& b : phase) b = static_cast<float>(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }

  template <typename T>
  Tensor<T> embed(const std::vector<double>& sigma) const {
    const std::size_t d = freq.size();
    Tensor<T> out({sigma.size(), d});
    for (std::size_t n = 0; n < sigma.size(); ++n) {
      const double u = std::log(sigma[n]) / 4.0;
      for (std::size_t k = 0; k < d; ++k) {
        out[n * d + k] = static_cast<T>(std::cos(2.0 * std::numbers::pi * freq[k] * u + phase[k]));
      }
    }
    return out;
  }
};

// Maxima of the training rooms used to scale v = s - r per axis.
inline constexpr double kVScale[3] = {20.0, 20.0, 8.0};

inline std::array<double, 3> conditioning_vector(const room::Vec3& source, const room::Vec3& receiver) {
  const room::Vec3 d = source - receiver;
  return {d.x() / kVScale[0], d.y() / kVScale[1], d.z() / kVScale[2]};
}

}  // namespace srirgen::diffusion
