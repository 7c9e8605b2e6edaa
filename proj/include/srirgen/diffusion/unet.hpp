#pragma once

#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "srirgen/core/layers.hpp"
#include "srirgen/diffusion/edm.hpp"

namespace srirgen::diffusion {

// Length-halving average pool over the last axis of (N, C, L).
template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x) {
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  if (len % 2 != 0) throw ShapeError("avgpool2: odd length in " + shape_string(x.shape()));
  Tensor<T> y({x.dim(0), x.dim(1), len / 2});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * len;
    T* dst = y.data() + r * (len / 2);
    for (std::size_t i = 0; i < len / 2; ++i) dst[i] = T(0.5) * (src[2 * i] + src[2 * i + 1]);
  }
  return y;
}

template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& gy) {
  const std::size_t rows = gy.dim(0) * gy.dim(1), half = gy.dim(2);
  Tensor<T> gx({gy.dim(0), gy.dim(1), 2 * half});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const T g = T(0.5) * gy[r * half + i];
      gx[r * 2 * half + 2 * i] = g;
      gx[r * 2 * half + 2 * i + 1] = g;
    }
  }
  return gx;
}

// Nearest-neighbour doubling over the last axis.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  Tensor<T> y({x.dim(0), x.dim(1), 2 * len});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < len; ++i) {
      y[r * 2 * len + 2 * i] = x[r * len + i];
      y[r * 2 * len + 2 * i + 1] = x[r * len + i];
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& gy) {
  const std::size_t rows = gy.dim(0) * gy.dim(1), len = gy.dim(2) / 2;
  Tensor<T> gx({gy.dim(0), gy.dim(1), len});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < len; ++i) gx[r * len + i] = gy[r * 2 * len + 2 * i] + gy[r * 2 * len + 2 * i + 1];
  }
  return gx;
}

// in -> hidden1 -> hidden2 -> out with ReLU after the two hidden layers.
template <typename T>
class CondMlp {
 public:
  struct State {
    Cache<T> l1, a1, l2, a2, l3;
  };

  CondMlp(const std::string& name, std::size_t in, const CondMlpConfig& c, Rng& rng)
      : l1_({LayerKind::kLinear, name + ".fc1", in, c.hidden1}, rng),
        l2_({LayerKind::kLinear, name + ".fc2", c.hidden1, c.hidden2}, rng),
        l3_({LayerKind::kLinear, name + ".fc3", c.hidden2, c.out}, rng) {}

  Tensor<T> forward(const Tensor<T>& x, State& st) {
    auto y = l1_.forward(x, st.l1, Mode::kTrain);
    y = a1_.forward(y, st.a1, Mode::kTrain);
    y = l2_.forward(y, st.l2, Mode::kTrain);
    y = a2_.forward(y, st.a2, Mode::kTrain);
    return l3_.forward(y, st.l3, Mode::kTrain);
  }

  Tensor<T> backward(const State& st, const Tensor<T>& gy) {
    auto g = l3_.backward(st.l3, gy);
    g = a2_.backward(st.a2, g);
    g = l2_.backward(st.l2, g);
    g = a1_.backward(st.a1, g);
    return l1_.backward(st.l1, g);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (Layer<T>* l : std::initializer_list<Layer<T>*>{&l1_, &l2_, &l3_}) {
      for (auto* p : l->params()) out.push_back(p);
    }
    return out;
  }

 private:
  Linear<T> l1_, l2_, l3_;
  Relu<T> a1_, a2_;
};

// FiLM, an optional 1x1 channel change, then y += conv_d(gelu(y)) for each
// dilation d. The dilated convolutions start at zero so a fresh block is the
// identity; with a random start every residual add doubles the activation
// variance.
template <typename T>
class ResBlock1d {
 public:
  struct State {
    Cache<T> film, shortcut;
    std::vector<Cache<T>> act, conv;
  };

  ResBlock1d(std::string name, std::size_t in, std::size_t out, std::size_t cond_dim, const UnetConfig& u,
             Rng& rng)
      : name_(std::move(name)), film_({LayerKind::kFilm, name_ + ".film", cond_dim, in}, rng) {
    if (in != out) {
      shortcut_ = std::make_unique<Conv1d<T>>(
          LayerSpec{LayerKind::kConv1dDilated, name_ + ".mix", in, out, 1}, rng);
    }
    for (std::size_t d : u.dilations()) {
      convs_.push_back(std::make_unique<Conv1d<T>>(
          LayerSpec{LayerKind::kConv1dDilated, name_ + ".conv_d" + std::to_string(d), out, out, u.kernel, 1, d},
          rng, /*zero_init=*/true));
    }
  }

  const std::string& name() const { return name_; }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond, State& st) {
    Tensor<T> y = film_.forward(x, cond, st.film);
    if (shortcut_) y = shortcut_->forward(y, st.shortcut, Mode::kTrain);
    st.act.assign(convs_.size(), {});
    st.conv.assign(convs_.size(), {});
    for (std::size_t k = 0; k < convs_.size(); ++k) {
      y += convs_[k]->forward(act_.forward(y, st.act[k], Mode::kTrain), st.conv[k], Mode::kTrain);
    }
    return y;
  }

  // Returns (input grad, conditioning grad).
  std::pair<Tensor<T>, Tensor<T>> backward(const State& st, const Tensor<T>& gy) {
    Tensor<T> g = gy;
    for (std::size_t k = convs_.size(); k-- > 0;) {
      g += act_.backward(st.act[k], convs_[k]->backward(st.conv[k], g));
    }
    if (shortcut_) g = shortcut_->backward(st.shortcut, g);
    return film_.backward(st.film, g);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out = film_.params();
    if (shortcut_) {
      for (auto* p : shortcut_->params()) out.push_back(p);
    }
    for (auto& c : convs_) {
      for (auto* p : c->params()) out.push_back(p);
    }
    return out;
  }

 private:
  std::string name_;
  Film<T> film_;
  std::unique_ptr<Conv1d<T>> shortcut_;
  std::vector<std::unique_ptr<Conv1d<T>>> convs_;
  Gelu<T> act_;
};

enum class BlockRole { kEncoder, kBottleneck, kDecoder };

inline const char* role_name(BlockRole r) {
  switch (r) {
    case BlockRole::kEncoder: return "encoder";
    case BlockRole::kBottleneck: return "bottleneck";
    case BlockRole::kDecoder: return "decoder";
  }
  return "?";
}

// Conditioning tensor seen by one FiLM block during a forward pass.
template <typename T>
struct FilmRecord {
  std::string block;
  BlockRole role;
  Tensor<T> cond;
};

// 1-D U-Net over (N, C, L). Encoder and bottleneck blocks are modulated by
// `enc_cond`, decoder blocks by `dec_cond`. The output convolution starts at
// zero.
template <typename T>
class Unet {
 public:
  struct State {
    Cache<T> in, out;
    std::vector<typename ResBlock1d<T>::State> enc, dec;
    typename ResBlock1d<T>::State mid;
  };

  Unet(const UnetConfig& u, std::size_t channels, std::size_t enc_cond, std::size_t dec_cond, Rng& rng)
      : cfg_(u),
        in_conv_({LayerKind::kConv1dDilated, "unet.in", channels, u.base_channels, u.kernel}, rng),
        mid_("unet.mid", u.base_channels, u.base_channels, enc_cond, u, rng),
        out_conv_({LayerKind::kConv1dDilated, "unet.out", u.base_channels, channels, u.kernel}, rng,
                  /*zero_init=*/true) {
    const std::size_t c = u.base_channels;
    for (std::size_t i = 0; i < u.depth; ++i) {
      enc_.push_back(std::make_unique<ResBlock1d<T>>("unet.enc" + std::to_string(i), c, c, enc_cond, u, rng));
    }
    for (std::size_t i = 0; i < u.depth; ++i) {
      dec_.push_back(std::make_unique<ResBlock1d<T>>("unet.dec" + std::to_string(i), 2 * c, c, dec_cond, u, rng));
    }
  }

  const UnetConfig& config() const { return cfg_; }

  void check_length(std::size_t len) const {
    const std::size_t m = std::size_t{1} << cfg_.depth;
    if (len == 0 || len % m != 0) {
      throw ShapeError("unet: length " + std::to_string(len) + " is not divisible by 2^depth = " +
                       std::to_string(m) + "; pad the input to a multiple of " + std::to_string(m));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& enc_cond, const Tensor<T>& dec_cond, State& st,
                    std::vector<FilmRecord<T>>* capture = nullptr) {
    if (x.ndim() != 3) throw ShapeError("unet: expected (N, C, L), got " + shape_string(x.shape()));
    check_length(x.dim(2));
    st.enc.assign(enc_.size(), {});
    st.dec.assign(dec_.size(), {});
    Tensor<T> a = in_conv_.forward(x, st.in, Mode::kTrain);
    std::vector<Tensor<T>> skips;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      if (capture) capture->push_back({enc_[i]->name(), BlockRole::kEncoder, enc_cond});
      a = enc_[i]->forward(a, enc_cond, st.enc[i]);
      skips.push_back(a);
      a = avgpool2(a);
    }
    if (capture) capture->push_back({mid_.name(), BlockRole::kBottleneck, enc_cond});
    a = mid_.forward(a, enc_cond, st.mid);
    for (std::size_t i = dec_.size(); i-- > 0;) {
      a = concat_channels(upsample2(a), skips[i]);
      if (capture) capture->push_back({dec_[i]->name(), BlockRole::kDecoder, dec_cond});
      a = dec_[i]->forward(a, dec_cond, st.dec[i]);
    }
    return out_conv_.forward(a, st.out, Mode::kTrain);
  }

  // Returns (input grad, encoder conditioning grad, decoder conditioning grad).
  std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> backward(const State& st, const Tensor<T>& gy) {
    const std::size_t c = cfg_.base_channels;
    Tensor<T> g = out_conv_.backward(st.out, gy);
    Tensor<T> g_enc, g_dec;
    auto accumulate = [](Tensor<T>& acc, const Tensor<T>& v) {
      if (acc.empty()) {
        acc = v;
      } else {
        acc += v;
      }
    };
    std::vector<Tensor<T>> g_skip(enc_.size());
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      auto [gx, gc] = dec_[i]->backward(st.dec[i], g);
      accumulate(g_dec, gc);
      auto [g_up, g_s] = split_channels(gx, c);
      g_skip[i] = std::move(g_s);
      g = upsample2_backward(g_up);
    }
    {
      auto [gx, gc] = mid_.backward(st.mid, g);
      accumulate(g_enc, gc);
      g = std::move(gx);
    }
    for (std::size_t i = enc_.size(); i-- > 0;) {
      g = avgpool2_backward(g);
      g += g_skip[i];
      auto [gx, gc] = enc_[i]->backward(st.enc[i], g);
      accumulate(g_enc, gc);
      g = std::move(gx);
    }
    return {in_conv_.backward(st.in, g), std::move(g_enc), std::move(g_dec)};
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out = in_conv_.params();
    auto add = [&](std::vector<Param<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
    for (auto& b : enc_) add(b->params());
    add(mid_.params());
    for (auto& b : dec_) add(b->params());
    add(out_conv_.params());
    return out;
  }

 private:
  UnetConfig cfg_;
  Conv1d<T> in_conv_;
  std::vector<std::unique_ptr<ResBlock1d<T>>> enc_, dec_;
  ResBlock1d<T> mid_;
  Conv1d<T> out_conv_;
};

}  // namespace srirgen::diffusion
