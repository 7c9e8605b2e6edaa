#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "srirgen/core/layers.hpp"
#include "srirgen/core/optim.hpp"

namespace srirgen::encoder {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EncoderConfig {
  std::size_t block_count = 6;
  std::size_t base_channels = 32;
  std::size_t input_planes = 8;
  std::size_t freq_bins = 33;
  std::size_t projection_hidden = 64;
  std::size_t embedding_dim = 32;
  double dropout = 0.1;
  double temperature = 0.1;
  int epochs = 20;
  std::size_t batch_size = 8;  // rooms per batch, two scenes each
  LrSchedule lr{1e-3, 0.98, 2};

  // Width of h: the final channel count, since frequency collapses to one bin.
  std::size_t h_dim() const { return base_channels; }

  // Frequency extent after each ceil-mode halving.
  std::vector<std::size_t> freq_cascade() const {
    std::vector<std::size_t> f{freq_bins};
    for (std::size_t b = 0; b < block_count; ++b) f.push_back((f.back() + 1) / 2);
    return f;
  }

  void validate() const {
    if (block_count < 1) throw ConfigError("encoder: block_count must be >= 1");
    if (!(temperature > 0)) throw ConfigError("encoder: temperature must be positive");
    if (base_channels == 0 || input_planes == 0 || projection_hidden == 0 || embedding_dim == 0) {
      throw ConfigError("encoder: widths must be positive");
    }
    if (freq_cascade().back() != 1) {
      throw ConfigError("encoder: " + std::to_string(block_count) + " stride-2 blocks leave " +
                        std::to_string(freq_cascade().back()) + " of " + std::to_string(freq_bins) +
                        " frequency bins, need 1");
    }
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("encoder: dropout must be in [0, 1)");
  }

  static EncoderConfig paper() {
    EncoderConfig c;
    c.block_count = 9;
    c.base_channels = 128;
    c.freq_bins = 257;
    c.projection_hidden = 256;
    c.embedding_dim = 128;
    c.epochs = 125;
    c.batch_size = 16;
    c.lr = {3e-4, 0.98, 2};
    return c;
  }
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"block_count", c.block_count},
          {"base_channels", c.base_channels},
          {"input_planes", c.input_planes},
          {"freq_bins", c.freq_bins},
          {"projection_hidden", c.projection_hidden},
          {"embedding_dim", c.embedding_dim},
          {"dropout", c.dropout},
          {"temperature", c.temperature},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_initial", c.lr.initial},
          {"lr_factor", c.lr.factor},
          {"lr_every", c.lr.every_n_epochs}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.block_count = j.at("block_count").get<std::size_t>();
  c.base_channels = j.at("base_channels").get<std::size_t>();
  c.input_planes = j.value("input_planes", c.input_planes);
  c.freq_bins = j.at("freq_bins").get<std::size_t>();
  c.projection_hidden = j.at("projection_hidden").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.dropout = j.value("dropout", c.dropout);
  c.temperature = j.value("temperature", c.temperature);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr.initial = j.value("lr_initial", c.lr.initial);
  c.lr.factor = j.value("lr_factor", c.lr.factor);
  c.lr.every_n_epochs = j.value("lr_every", c.lr.every_n_epochs);
  c.validate();
  return c;
}

// conv(s2)-BN-ReLU-conv-BN plus a conv(s2)-BN shortcut, summed and rectified.
// Convolutions feeding batch norm carry no bias.
template <typename T>
class ResidualBlock {
 public:
  struct State {
    Cache<T> conv_a, bn_a, relu_a, conv_b, bn_b, conv_r, bn_r, relu_out;
  };

  ResidualBlock(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : conv_a_({LayerKind::kConv2d, name + ".conv_a", in, out, 3, 2, 1, 0.0, false}, rng),
        bn_a_({LayerKind::kBatchNorm, name + ".bn_a", 0, out}),
        relu_a_({LayerKind::kRelu, name + ".relu_a"}),
        conv_b_({LayerKind::kConv2d, name + ".conv_b", out, out, 3, 1, 1, 0.0, false}, rng),
        bn_b_({LayerKind::kBatchNorm, name + ".bn_b", 0, out}),
        conv_r_({LayerKind::kConv2d, name + ".conv_r", in, out, 3, 2, 1, 0.0, false}, rng),
        bn_r_({LayerKind::kBatchNorm, name + ".bn_r", 0, out}),
        relu_out_({LayerKind::kRelu, name + ".relu_out"}) {}

  Tensor<T> forward(const Tensor<T>& x, State& s, Mode mode) {
    Tensor<T> a = relu_a_.forward(bn_a_.forward(conv_a_.forward(x, s.conv_a, mode), s.bn_a, mode), s.relu_a, mode);
    Tensor<T> main = bn_b_.forward(conv_b_.forward(a, s.conv_b, mode), s.bn_b, mode);
    main += bn_r_.forward(conv_r_.forward(x, s.conv_r, mode), s.bn_r, mode);
    return relu_out_.forward(main, s.relu_out, mode);
  }

  Tensor<T> backward(const State& s, const Tensor<T>& gy) {
    const Tensor<T> g = relu_out_.backward(s.relu_out, gy);
    Tensor<T> gx = conv_a_.backward(
        s.conv_a,
        bn_a_.backward(s.bn_a, relu_a_.backward(s.relu_a, conv_b_.backward(s.conv_b, bn_b_.backward(s.bn_b, g)))));
    gx += conv_r_.backward(s.conv_r, bn_r_.backward(s.bn_r, g));
    return gx;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (Layer<T>* l : std::initializer_list<Layer<T>*>{&conv_a_, &bn_a_, &conv_b_, &bn_b_, &conv_r_, &bn_r_}) {
      for (auto* p : l->params()) out.push_back(p);
    }
    return out;
  }

  std::vector<Param<T>*> buffers() {
    std::vector<Param<T>*> out;
    for (auto* bn : {&bn_a_, &bn_b_, &bn_r_}) {
      for (auto* p : bn->buffers()) out.push_back(p);
    }
    return out;
  }

 private:
  Conv2d<T> conv_a_;
  BatchNorm<T> bn_a_;
  Relu<T> relu_a_;
  Conv2d<T> conv_b_;
  BatchNorm<T> bn_b_;
  Conv2d<T> conv_r_;
  BatchNorm<T> bn_r_;
  Relu<T> relu_out_;
};

// Scene tensors (N, 8, t, f) -> h (N, base_channels) -> z (N, embedding_dim).
template <typename T>
class RoomEncoder {
 public:
  struct State {
    std::vector<typename ResidualBlock<T>::State> blocks;
    Cache<T> pool;
  };
  struct ProjectionState {
    Cache<T> dropout, fc1, relu, fc2;
    Tensor<T> pre_norm;
    Tensor<T> z;
  };

  RoomEncoder(EncoderConfig cfg, Rng& rng)
      : cfg_(std::move(cfg)),
        dropout_({LayerKind::kDropout, "proj.dropout", 0, 0, 3, 1, 1, cfg_.dropout}),
        fc1_({LayerKind::kLinear, "proj.fc1", cfg_.h_dim(), cfg_.projection_hidden}, rng),
        relu_({LayerKind::kRelu, "proj.relu"}),
        fc2_({LayerKind::kLinear, "proj.fc2", cfg_.projection_hidden, cfg_.embedding_dim}, rng) {
    cfg_.validate();
    std::size_t in = cfg_.input_planes;
    for (std::size_t b = 0; b < cfg_.block_count; ++b) {
      blocks_.push_back(std::make_unique<ResidualBlock<T>>("block" + std::to_string(b), in, cfg_.base_channels, rng));
      in = cfg_.base_channels;
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  Tensor<T> embed(const Tensor<T>& x, State& s, Mode mode) {
    if (x.ndim() != 4 || x.dim(1) != cfg_.input_planes || x.dim(3) != cfg_.freq_bins) {
      throw ShapeError("encoder: expected (N, " + std::to_string(cfg_.input_planes) + ", t, " +
                       std::to_string(cfg_.freq_bins) + "), got " + shape_string(x.shape()));
    }
    s.blocks.resize(blocks_.size());
    Tensor<T> y = x;
    for (std::size_t b = 0; b < blocks_.size(); ++b) y = blocks_[b]->forward(y, s.blocks[b], mode);
    return pool_.forward(y, s.pool, mode);
  }

  Tensor<T> embed_backward(const State& s, const Tensor<T>& gh) {
    Tensor<T> g = pool_.backward(s.pool, gh);
    for (std::size_t b = blocks_.size(); b-- > 0;) g = blocks_[b]->backward(s.blocks[b], g);
    return g;
  }

  Tensor<T> project(const Tensor<T>& h, ProjectionState& s, Mode mode, Rng* rng) {
    Tensor<T> y = fc2_.forward(relu_.forward(fc1_.forward(dropout_.forward(h, s.dropout, mode, rng), s.fc1, mode),
                                             s.relu, mode),
                               s.fc2, mode);
    s.pre_norm = y;
    const std::size_t n = y.dim(0), d = y.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      double ss = 0;
      for (std::size_t k = 0; k < d; ++k) ss += static_cast<double>(y[i * d + k]) * y[i * d + k];
      const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
      for (std::size_t k = 0; k < d; ++k) y[i * d + k] = static_cast<T>(y[i * d + k] * inv);
    }
    s.z = y;
    return y;
  }

  Tensor<T> project_backward(const ProjectionState& s, const Tensor<T>& gz) {
    const std::size_t n = gz.dim(0), d = gz.dim(1);
    Tensor<T> gy(gz.shape());
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0, zg = 0;
      for (std::size_t k = 0; k < d; ++k) {
        norm += static_cast<double>(s.pre_norm[i * d + k]) * s.pre_norm[i * d + k];
        zg += static_cast<double>(s.z[i * d + k]) * gz[i * d + k];
      }
      norm = std::max(std::sqrt(norm), 1e-12);
      for (std::size_t k = 0; k < d; ++k) gy[i * d + k] = static_cast<T>((gz[i * d + k] - s.z[i * d + k] * zg) / norm);
    }
    return dropout_.backward(
        s.dropout, fc1_.backward(s.fc1, relu_.backward(s.relu, fc2_.backward(s.fc2, gy))));
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& b : blocks_) {
      for (auto* p : b->params()) out.push_back(p);
    }
    for (auto* p : fc1_.params()) out.push_back(p);
    for (auto* p : fc2_.params()) out.push_back(p);
    return out;
  }

  std::vector<Param<T>*> buffers() {
    std::vector<Param<T>*> out;
    for (auto& b : blocks_) {
      for (auto* p : b->buffers()) out.push_back(p);
    }
    return out;
  }

  // Trainable parameters followed by batch-norm running statistics.
  std::vector<Param<T>*> state_tensors() {
    auto out = params();
    for (auto* p : buffers()) out.push_back(p);
    return out;
  }

 private:
  EncoderConfig cfg_;
  std::vector<std::unique_ptr<ResidualBlock<T>>> blocks_;
  MaxPoolTime<T> pool_;
  Dropout<T> dropout_;
  Linear<T> fc1_;
  Relu<T> relu_;
  Linear<T> fc2_;
};

struct NtXent {
  double loss = 0;
  Tensor<double> grad;  // dloss/dz, same shape as z
};

// Rows 2k and 2k+1 of z (unit-norm) are a positive pair. Loss is the mean over
// all anchors of -log softmax of the positive similarity over every other row.
template <typename T>
NtXent nt_xent_loss(const Tensor<T>& z, double temperature) {
  if (z.ndim() != 2) throw ShapeError("nt_xent: expected (2N, D), got " + shape_string(z.shape()));
  const std::size_t m = z.dim(0), d = z.dim(1);
  if (m == 0 || m % 2 != 0) throw std::invalid_argument("nt_xent: batch of " + std::to_string(m) + " is not 2N");
  if (!(temperature > 0)) throw std::invalid_argument("nt_xent: temperature must be positive");
  std::vector<double> s(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(z[i * d + k]) * z[j * d + k];
      s[i * m + j] = acc / temperature;
    }
  }
  // coef = softmax over k != i minus the positive indicator.
  std::vector<double> coef(m * m, 0.0);
  NtXent out;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t pos = i ^ 1;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) mx = std::max(mx, s[i * m + k]);
    }
    double sum = 0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) sum += std::exp(s[i * m + k] - mx);
    }
    const double lse = mx + std::log(sum);
    out.loss += lse - s[i * m + pos];
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) coef[i * m + k] = std::exp(s[i * m + k] - lse);
    }
    coef[i * m + pos] -= 1.0;
  }
  out.loss /= static_cast<double>(m);
  out.grad = Tensor<double>({m, d});
  const double scale = 1.0 / (static_cast<double>(m) * temperature);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      const double c = (coef[i * m + k] + coef[k * m + i]) * scale;
      if (c == 0) continue;
      for (std::size_t e = 0; e < d; ++e) out.grad[i * d + e] += c * z[k * d + e];
    }
  }
  return out;
}

}  // namespace srirgen::encoder
