#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "srirgen/core/blas.hpp"
#include "srirgen/core/rng.hpp"
#include "srirgen/core/tensor.hpp"

namespace srirgen {

enum class Mode { kTrain, kEval };

enum class LayerKind {
  kConv2d,
  kConv1dDilated,
  kLinear,
  kBatchNorm,
  kRelu,
  kGelu,
  kMaxPoolTime,
  kDropout,
  kFilm,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kConv1dDilated: return "conv1d-dilated";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kGelu: return "gelu";
    case LayerKind::kMaxPoolTime: return "maxpool-time";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kFilm: return "film";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  std::size_t in_channels = 0;   // also linear in-features / film cond dim
  std::size_t out_channels = 0;  // also linear out-features / film channels
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  double dropout_rate = 0.0;
  bool bias = true;

  std::string label() const {
    return name.empty() ? std::string(layer_kind_name(kind)) : name;
  }

  void validate() const {
    if (stride < 1) throw std::invalid_argument(label() + ": stride must be >= 1");
    if (dilation < 1) {
      throw std::invalid_argument(label() + ": dilation must be >= 1");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw std::invalid_argument(label() + ": dropout rate must be in [0,1)");
    }
    const bool needs_channels =
        kind == LayerKind::kConv2d || kind == LayerKind::kConv1dDilated ||
        kind == LayerKind::kLinear || kind == LayerKind::kFilm;
    if (needs_channels && (in_channels == 0 || out_channels == 0)) {
      throw std::invalid_argument(label() + ": channel counts must be positive");
    }
    if (kind == LayerKind::kBatchNorm && out_channels == 0) {
      throw std::invalid_argument(label() + ": batchnorm needs out_channels");
    }
    if (kind == LayerKind::kConv1dDilated && (kernel % 2 == 0 || stride != 1)) {
      throw std::invalid_argument(label() +
                                  ": conv1d needs an odd kernel and stride 1");
    }
  }
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(T(0)); }
};

// Activations saved by a forward pass for the matching backward pass. Owned by
// the caller so that a layer can serve several in-flight evaluations.
template <typename T>
struct Cache {
  std::vector<Tensor<T>> saved;
  std::vector<std::size_t> indices;
  Shape input_shape;
  bool ready = false;

  void reset() {
    saved.clear();
    indices.clear();
    input_shape.clear();
    ready = false;
  }
};

template <typename T>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }

  virtual Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode mode,
                            Rng* rng = nullptr) = 0;
  // Returns the input gradient and accumulates parameter gradients.
  virtual Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }

 protected:
  void require_cache(const Cache<T>& cache) const {
    if (!cache.ready) {
      throw std::logic_error(spec_.label() +
                             ": backward called without a cached forward pass");
    }
  }
  [[noreturn]] void shape_fail(const std::string& what, const Shape& got) const {
    throw ShapeError(spec_.label() + ": " + what + ", got input " +
                     shape_string(got));
  }

  LayerSpec spec_;
};

namespace detail {

template <typename T>
void he_normal(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w) v = static_cast<T>(rng.normal(0.0, sd));
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Leading zero padding for ceil-mode output sizing.
inline std::size_t ceil_mode_pad(std::size_t in, std::size_t out,
                                 std::size_t kernel, std::size_t stride) {
  const long total = static_cast<long>((out - 1) * stride + kernel) -
                     static_cast<long>(in);
  return total > 0 ? static_cast<std::size_t>(total / 2) : 0;
}

}  // namespace detail

// 2-D convolution over (N, C, H, W) with zero padding and ceil-mode output
// sizing: out = ceil(in / stride) along both spatial axes.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(LayerSpec spec, Rng& rng)
      : Layer<T>(std::move(spec)),
        weight_(this->spec_.label() + ".weight",
                Tensor<T>({this->spec_.out_channels, patch_size()})),
        bias_(this->spec_.label() + ".bias", Tensor<T>({this->spec_.out_channels})) {
    detail::he_normal(weight_.value, patch_size(), rng);
  }

  static std::size_t out_extent(std::size_t in, std::size_t stride) {
    return detail::ceil_div(in, stride);
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode,
                    Rng* = nullptr) override {
    const auto& s = this->spec_;
    if (x.ndim() != 4) this->shape_fail("expected 4-D (N, C, H, W)", x.shape());
    if (x.dim(1) != s.in_channels) {
      this->shape_fail("channel dimension must be " + std::to_string(s.in_channels),
                       x.shape());
    }
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = out_extent(h, s.stride), wo = out_extent(w, s.stride);
    Tensor<T> y({n, s.out_channels, ho, wo});
    std::vector<T> col(patch_size() * ho * wo);
    const std::size_t p = ho * wo;
    for (std::size_t b = 0; b < n; ++b) {
      im2col(x.data() + b * s.in_channels * h * w, h, w, ho, wo, col.data());
      T* yb = y.data() + b * s.out_channels * p;
      blas::gemm(false, false, static_cast<int>(s.out_channels), static_cast<int>(p),
                 static_cast<int>(patch_size()), T(1), weight_.value.data(),
                 static_cast<int>(patch_size()), col.data(), static_cast<int>(p),
                 T(0), yb, static_cast<int>(p));
      for (std::size_t c = 0; c < s.out_channels; ++c) {
        const T bc = bias_.value[c];
        for (std::size_t i = 0; i < p; ++i) yb[c * p + i] += bc;
      }
    }
    cache.reset();
    cache.saved.push_back(x);
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    const auto& s = this->spec_;
    const Tensor<T>& x = cache.saved[0];
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = gy.dim(2), wo = gy.dim(3), p = ho * wo;
    const std::size_t k = patch_size();
    Tensor<T> gx(x.shape());
    std::vector<T> col(k * p), gcol(k * p);
    for (std::size_t b = 0; b < n; ++b) {
      const T* gyb = gy.data() + b * s.out_channels * p;
      im2col(x.data() + b * s.in_channels * h * w, h, w, ho, wo, col.data());
      blas::gemm(false, true, static_cast<int>(s.out_channels), static_cast<int>(k),
                 static_cast<int>(p), T(1), gyb, static_cast<int>(p), col.data(),
                 static_cast<int>(p), T(1), weight_.grad.data(), static_cast<int>(k));
      for (std::size_t c = 0; c < s.out_channels; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < p; ++i) acc += gyb[c * p + i];
        bias_.grad[c] += acc;
      }
      blas::gemm(true, false, static_cast<int>(k), static_cast<int>(p),
                 static_cast<int>(s.out_channels), T(1), weight_.value.data(),
                 static_cast<int>(k), gyb, static_cast<int>(p), T(0), gcol.data(),
                 static_cast<int>(p));
      col2im(gcol.data(), h, w, ho, wo, gx.data() + b * s.in_channels * h * w);
    }
    return gx;
  }

  // Without a bias the (zero) bias tensor is neither trained nor stored.
  std::vector<Param<T>*> params() override {
    if (this->spec_.bias) return {&weight_, &bias_};
    return {&weight_};
  }

 private:
  std::size_t patch_size() const {
    return this->spec_.in_channels * this->spec_.kernel * this->spec_.kernel;
  }

  void im2col(const T* x, std::size_t h, std::size_t w, std::size_t ho,
              std::size_t wo, T* col) const {
    const auto& s = this->spec_;
    const std::size_t k = s.kernel, st = s.stride;
    const long pt = static_cast<long>(detail::ceil_mode_pad(h, ho, k, st));
    const long pl = static_cast<long>(detail::ceil_mode_pad(w, wo, k, st));
    const std::size_t p = ho * wo;
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      for (std::size_t ki = 0; ki < k; ++ki) {
        for (std::size_t kj = 0; kj < k; ++kj) {
          T* row = col + ((c * k + ki) * k + kj) * p;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * st + ki) - pt;
            T* dst = row + oh * wo;
            if (ih < 0 || ih >= static_cast<long>(h)) {
              std::fill_n(dst, wo, T(0));
              continue;
            }
            const T* src = x + (c * h + static_cast<std::size_t>(ih)) * w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * st + kj) - pl;
              dst[ow] = (iw < 0 || iw >= static_cast<long>(w))
                            ? T(0)
                            : src[static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, std::size_t h, std::size_t w, std::size_t ho,
              std::size_t wo, T* gx) const {
    const auto& s = this->spec_;
    const std::size_t k = s.kernel, st = s.stride;
    const long pt = static_cast<long>(detail::ceil_mode_pad(h, ho, k, st));
    const long pl = static_cast<long>(detail::ceil_mode_pad(w, wo, k, st));
    const std::size_t p = ho * wo;
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      for (std::size_t ki = 0; ki < k; ++ki) {
        for (std::size_t kj = 0; kj < k; ++kj) {
          const T* row = col + ((c * k + ki) * k + kj) * p;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * st + ki) - pt;
            if (ih < 0 || ih >= static_cast<long>(h)) continue;
            T* dst = gx + (c * h + static_cast<std::size_t>(ih)) * w;
            const T* src = row + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * st + kj) - pl;
              if (iw >= 0 && iw < static_cast<long>(w)) {
                dst[static_cast<std::size_t>(iw)] += src[ow];
              }
            }
          }
        }
      }
    }
  }

  Param<T> weight_;
  Param<T> bias_;
};

// 1-D dilated convolution over (N, C, L), stride 1, "same" zero padding.
template <typename T>
class Conv1d : public Layer<T> {
 public:
  Conv1d(LayerSpec spec, Rng& rng, bool zero_init = false)
      : Layer<T>(std::move(spec)),
        weight_(this->spec_.label() + ".weight",
                Tensor<T>({this->spec_.out_channels, patch_size()})),
        bias_(this->spec_.label() + ".bias", Tensor<T>({this->spec_.out_channels})) {
    if (!zero_init) detail::he_normal(weight_.value, patch_size(), rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode,
                    Rng* = nullptr) override {
    const auto& s = this->spec_;
    if (x.ndim() != 3) this->shape_fail("expected 3-D (N, C, L)", x.shape());
    if (x.dim(1) != s.in_channels) {
      this->shape_fail("channel dimension must be " + std::to_string(s.in_channels),
                       x.shape());
    }
    const std::size_t n = x.dim(0), len = x.dim(2);
    Tensor<T> y({n, s.out_channels, len});
    std::vector<T> col(patch_size() * len);
    for (std::size_t b = 0; b < n; ++b) {
      im2col(x.data() + b * s.in_channels * len, len, col.data());
      T* yb = y.data() + b * s.out_channels * len;
      blas::gemm(false, false, static_cast<int>(s.out_channels), static_cast<int>(len),
                 static_cast<int>(patch_size()), T(1), weight_.value.data(),
                 static_cast<int>(patch_size()), col.data(), static_cast<int>(len),
                 T(0), yb, static_cast<int>(len));
      for (std::size_t c = 0; c < s.out_channels; ++c) {
        const T bc = bias_.value[c];
        for (std::size_t i = 0; i < len; ++i) yb[c * len + i] += bc;
      }
    }
    cache.reset();
    cache.saved.push_back(x);
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    const auto& s = this->spec_;
    const Tensor<T>& x = cache.saved[0];
    const std::size_t n = x.dim(0), len = x.dim(2), k = patch_size();
    Tensor<T> gx(x.shape());
    std::vector<T> col(k * len), gcol(k * len);
    for (std::size_t b = 0; b < n; ++b) {
      const T* gyb = gy.data() + b * s.out_channels * len;
      im2col(x.data() + b * s.in_channels * len, len, col.data());
      blas::gemm(false, true, static_cast<int>(s.out_channels), static_cast<int>(k),
                 static_cast<int>(len), T(1), gyb, static_cast<int>(len), col.data(),
                 static_cast<int>(len), T(1), weight_.grad.data(), static_cast<int>(k));
      for (std::size_t c = 0; c < s.out_channels; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < len; ++i) acc += gyb[c * len + i];
        bias_.grad[c] += acc;
      }
      blas::gemm(true, false, static_cast<int>(k), static_cast<int>(len),
                 static_cast<int>(s.out_channels), T(1), weight_.value.data(),
                 static_cast<int>(k), gyb, static_cast<int>(len), T(0), gcol.data(),
                 static_cast<int>(len));
      col2im(gcol.data(), len, gx.data() + b * s.in_channels * len);
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  std::size_t patch_size() const {
    return this->spec_.in_channels * this->spec_.kernel;
  }
  long pad() const {
    return static_cast<long>(this->spec_.dilation * (this->spec_.kernel - 1) / 2);
  }

  void im2col(const T* x, std::size_t len, T* col) const {
    const auto& s = this->spec_;
    const long pd = pad(), L = static_cast<long>(len);
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      const T* src = x + c * len;
      for (std::size_t kk = 0; kk < s.kernel; ++kk) {
        T* row = col + (c * s.kernel + kk) * len;
        const long off = static_cast<long>(kk * s.dilation) - pd;
        for (long i = 0; i < L; ++i) {
          const long j = i + off;
          row[i] = (j < 0 || j >= L) ? T(0) : src[j];
        }
      }
    }
  }

  void col2im(const T* col, std::size_t len, T* gx) const {
    const auto& s = this->spec_;
    const long pd = pad(), L = static_cast<long>(len);
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      T* dst = gx + c * len;
      for (std::size_t kk = 0; kk < s.kernel; ++kk) {
        const T* row = col + (c * s.kernel + kk) * len;
        const long off = static_cast<long>(kk * s.dilation) - pd;
        const long lo = std::max<long>(0, -off), hi = std::min<long>(L, L - off);
        for (long i = lo; i < hi; ++i) dst[i + off] += row[i];
      }
    }
  }

  Param<T> weight_;
  Param<T> bias_;
};

// y = x W^T + b over (N, in_features).
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(LayerSpec spec, Rng& rng, bool zero_init = false)
      : Layer<T>(std::move(spec)),
        weight_(this->spec_.label() + ".weight",
                Tensor<T>({this->spec_.out_channels, this->spec_.in_channels})),
        bias_(this->spec_.label() + ".bias", Tensor<T>({this->spec_.out_channels})) {
    if (!zero_init) detail::he_normal(weight_.value, this->spec_.in_channels, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode,
                    Rng* = nullptr) override {
    const auto& s = this->spec_;
    if (x.ndim() != 2 || x.dim(1) != s.in_channels) {
      this->shape_fail("expected (N, " + std::to_string(s.in_channels) + ")",
                       x.shape());
    }
    const std::size_t n = x.dim(0);
    Tensor<T> y({n, s.out_channels});
    blas::gemm(false, true, static_cast<int>(n), static_cast<int>(s.out_channels),
               static_cast<int>(s.in_channels), T(1), x.data(),
               static_cast<int>(s.in_channels), weight_.value.data(),
               static_cast<int>(s.in_channels), T(0), y.data(),
               static_cast<int>(s.out_channels));
    if (s.bias) {
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t o = 0; o < s.out_channels; ++o) {
          y[b * s.out_channels + o] += bias_.value[o];
        }
      }
    }
    cache.reset();
    cache.saved.push_back(x);
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    const auto& s = this->spec_;
    const Tensor<T>& x = cache.saved[0];
    const std::size_t n = x.dim(0);
    blas::gemm(true, false, static_cast<int>(s.out_channels),
               static_cast<int>(s.in_channels), static_cast<int>(n), T(1), gy.data(),
               static_cast<int>(s.out_channels), x.data(),
               static_cast<int>(s.in_channels), T(1), weight_.grad.data(),
               static_cast<int>(s.in_channels));
    if (s.bias) {
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t o = 0; o < s.out_channels; ++o) {
          bias_.grad[o] += gy[b * s.out_channels + o];
        }
      }
    }
    Tensor<T> gx(x.shape());
    blas::gemm(false, false, static_cast<int>(n), static_cast<int>(s.in_channels),
               static_cast<int>(s.out_channels), T(1), gy.data(),
               static_cast<int>(s.out_channels), weight_.value.data(),
               static_cast<int>(s.in_channels), T(0), gx.data(),
               static_cast<int>(s.in_channels));
    return gx;
  }

  std::vector<Param<T>*> params() override {
    if (this->spec_.bias) return {&weight_, &bias_};
    return {&weight_};
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  Param<T> weight_;
  Param<T> bias_;
};

// Batch normalization over dim 1 of (N, C, ...), statistics pooled over the
// batch and all trailing dims.
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm(LayerSpec spec)
      : Layer<T>(std::move(spec)),
        gamma_(this->spec_.label() + ".gamma", Tensor<T>({this->spec_.out_channels}, T(1))),
        beta_(this->spec_.label() + ".beta", Tensor<T>({this->spec_.out_channels})),
        running_mean_(this->spec_.label() + ".running_mean",
                      Tensor<T>({this->spec_.out_channels})),
        running_var_(this->spec_.label() + ".running_var",
                     Tensor<T>({this->spec_.out_channels}, T(1))) {}

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode mode,
                    Rng* = nullptr) override {
    const std::size_t c = this->spec_.out_channels;
    if (x.ndim() < 2 || x.dim(1) != c) {
      this->shape_fail("channel dimension must be " + std::to_string(c), x.shape());
    }
    const std::size_t n = x.dim(0), inner = x.size() / (n * c), m = n * inner;
    Tensor<T> y(x.shape());
    Tensor<T> xhat(x.shape());
    Tensor<T> inv_std({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean, var;
      if (mode == Mode::kTrain) {
        double s = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = x.data() + (b * c + ch) * inner;
          for (std::size_t i = 0; i < inner; ++i) s += p[i];
        }
        mean = s / static_cast<double>(m);
        double ss = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = x.data() + (b * c + ch) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            const double d = p[i] - mean;
            ss += d * d;
          }
        }
        var = ss / static_cast<double>(m);
        const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
        running_mean_.value[ch] = static_cast<T>(
            (1 - kMomentum) * running_mean_.value[ch] + kMomentum * mean);
        running_var_.value[ch] = static_cast<T>(
            (1 - kMomentum) * running_var_.value[ch] + kMomentum * unbiased);
      } else {
        mean = running_mean_.value[ch];
        var = running_var_.value[ch];
      }
      const double is = 1.0 / std::sqrt(var + kEps);
      inv_std[ch] = static_cast<T>(is);
      const T g = gamma_.value[ch], bt = beta_.value[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const T xh = static_cast<T>((x[off + i] - mean) * is);
          xhat[off + i] = xh;
          y[off + i] = g * xh + bt;
        }
      }
    }
    cache.reset();
    cache.saved.push_back(std::move(xhat));
    cache.saved.push_back(std::move(inv_std));
    cache.indices.push_back(mode == Mode::kTrain ? 1 : 0);
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    const Tensor<T>& xhat = cache.saved[0];
    const Tensor<T>& inv_std = cache.saved[1];
    const bool train = cache.indices[0] == 1;
    const std::size_t c = this->spec_.out_channels;
    const std::size_t n = xhat.dim(0), inner = xhat.size() / (n * c), m = n * inner;
    Tensor<T> gx(xhat.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sg = 0, sgx = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sg += gy[off + i];
          sgx += gy[off + i] * xhat[off + i];
        }
      }
      gamma_.grad[ch] += static_cast<T>(sgx);
      beta_.grad[ch] += static_cast<T>(sg);
      const double g = gamma_.value[ch], is = inv_std[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          if (train) {
            gx[off + i] = static_cast<T>(
                g * is / static_cast<double>(m) *
                (static_cast<double>(m) * gy[off + i] - sg - xhat[off + i] * sgx));
          } else {
            gx[off + i] = static_cast<T>(g * is * gy[off + i]);
          }
        }
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  // Running statistics are state, not trainable parameters; they are listed
  // separately so checkpoints can carry them.
  std::vector<Param<T>*> buffers() { return {&running_mean_, &running_var_}; }

 private:
  Param<T> gamma_;
  Param<T> beta_;
  Param<T> running_mean_;
  Param<T> running_var_;
};

template <typename T>
class Relu : public Layer<T> {
 public:
  explicit Relu(LayerSpec spec = {LayerKind::kRelu}) : Layer<T>(std::move(spec)) {}

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode,
                    Rng* = nullptr) override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    cache.reset();
    cache.saved.push_back(x);
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    const Tensor<T>& x = cache.saved[0];
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
    return gx;
  }
};

// GeLU with the exact erf form.
template <typename T>
class Gelu : public Layer<T> {
 public:
  explicit Gelu(LayerSpec spec = {LayerKind::kGelu}) : Layer<T>(std::move(spec)) {}

  static T value(T x) {
    return static_cast<T>(0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)));
  }
  static T derivative(T x) {
    const double xd = x;
    const double cdf = 0.5 * (1.0 + std::erf(xd * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
    return static_cast<T>(cdf + xd * pdf);
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode,
                    Rng* = nullptr) override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = value(x[i]);
    cache.reset();
    cache.saved.push_back(x);
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    const Tensor<T>& x = cache.saved[0];
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = gy[i] * derivative(x[i]);
    return gx;
  }
};

// Max over the time axis (dim 2) of (N, C, T, F) -> (N, C * F).
template <typename T>
class MaxPoolTime : public Layer<T> {
 public:
  explicit MaxPoolTime(LayerSpec spec = {LayerKind::kMaxPoolTime})
      : Layer<T>(std::move(spec)) {}

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode,
                    Rng* = nullptr) override {
    if (x.ndim() != 4) this->shape_fail("expected 4-D (N, C, T, F)", x.shape());
    const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), f = x.dim(3);
    Tensor<T> y({n, c * f});
    cache.reset();
    cache.indices.resize(n * c * f);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* base = x.data() + (b * c + ch) * t * f;
        for (std::size_t j = 0; j < f; ++j) {
          std::size_t best = 0;
          for (std::size_t i = 1; i < t; ++i) {
            if (base[i * f + j] > base[best * f + j]) best = i;
          }
          y[(b * c + ch) * f + j] = base[best * f + j];
          cache.indices[(b * c + ch) * f + j] = best;
        }
      }
    }
    cache.input_shape = x.shape();
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    Tensor<T> gx(cache.input_shape);
    const std::size_t n = gx.dim(0), c = gx.dim(1), t = gx.dim(2), f = gx.dim(3);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        T* base = gx.data() + (b * c + ch) * t * f;
        for (std::size_t j = 0; j < f; ++j) {
          const std::size_t k = (b * c + ch) * f + j;
          base[cache.indices[k] * f + j] += gy[k];
        }
      }
    }
    return gx;
  }
};

template <typename T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(LayerSpec spec) : Layer<T>(std::move(spec)) {}

  Tensor<T> forward(const Tensor<T>& x, Cache<T>& cache, Mode mode,
                    Rng* rng = nullptr) override {
    const double p = this->spec_.dropout_rate;
    Tensor<T> mask(x.shape(), T(1));
    if (mode == Mode::kTrain && p > 0.0) {
      if (rng == nullptr) {
        throw std::invalid_argument(this->spec_.label() +
                                    ": train-mode dropout needs an rng");
      }
      const T keep = static_cast<T>(1.0 / (1.0 - p));
      for (auto& m : mask) m = rng->uniform() < p ? T(0) : keep;
    }
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
    cache.reset();
    cache.saved.push_back(std::move(mask));
    cache.ready = true;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy) override {
    this->require_cache(cache);
    const Tensor<T>& mask = cache.saved[0];
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * mask[i];
    return gx;
  }
};

// Feature-wise modulation (1 + gamma) * x + beta. `mod` is (N, 2C) holding
// gamma in the first C columns and beta in the last C.
template <typename T>
Tensor<T> film_modulate(const Tensor<T>& x, const Tensor<T>& mod) {
  if (x.ndim() < 2 || mod.ndim() != 2 || mod.dim(0) != x.dim(0) ||
      mod.dim(1) != 2 * x.dim(1)) {
    throw ShapeError("film: modulation " + shape_string(mod.shape()) +
                     " does not match input " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T g = T(1) + mod[b * 2 * c + ch], bt = mod[b * 2 * c + c + ch];
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) y[off + i] = g * x[off + i] + bt;
    }
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> film_modulate_backward(const Tensor<T>& x,
                                                       const Tensor<T>& mod,
                                                       const Tensor<T>& gy) {
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  Tensor<T> gx(x.shape()), gmod(mod.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T g = T(1) + mod[b * 2 * c + ch];
      const std::size_t off = (b * c + ch) * inner;
      T sgx = 0, sg = 0;
      for (std::size_t i = 0; i < inner; ++i) {
        gx[off + i] = g * gy[off + i];
        sgx += gy[off + i] * x[off + i];
        sg += gy[off + i];
      }
      gmod[b * 2 * c + ch] = sgx;
      gmod[b * 2 * c + c + ch] = sg;
    }
  }
  return {std::move(gx), std::move(gmod)};
}

// FiLM layer: a linear map from a conditioning vector to (gamma, beta) per
// channel followed by film_modulate. The projection starts at zero, so an
// untrained layer is the identity.
template <typename T>
class Film {
 public:
  Film(LayerSpec spec, Rng& rng)
      : spec_(std::move(spec)),
        proj_(LayerSpec{LayerKind::kLinear, spec_.label() + ".proj",
                        spec_.in_channels, 2 * spec_.out_channels},
              rng, /*zero_init=*/true) {
    spec_.validate();
  }

  const LayerSpec& spec() const { return spec_; }

  // x: (N, C, ...), cond: (N, cond_dim).
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond, Cache<T>& cache) {
    if (x.ndim() < 2 || x.dim(1) != spec_.out_channels) {
      throw ShapeError(spec_.label() + ": channel dimension must be " +
                       std::to_string(spec_.out_channels) + ", got input " +
                       shape_string(x.shape()));
    }
    Cache<T> proj_cache;
    Tensor<T> mod = proj_.forward(cond, proj_cache, Mode::kTrain);
    Tensor<T> y = film_modulate(x, mod);
    cache.reset();
    cache.saved.push_back(x);
    cache.saved.push_back(std::move(mod));
    cache.saved.push_back(std::move(proj_cache.saved[0]));
    cache.ready = true;
    return y;
  }

  // Returns (input grad, conditioning grad).
  std::pair<Tensor<T>, Tensor<T>> backward(const Cache<T>& cache,
                                           const Tensor<T>& gy) {
    if (!cache.ready) {
      throw std::logic_error(spec_.label() +
                             ": backward called without a cached forward pass");
    }
    auto [gx, gmod] = film_modulate_backward(cache.saved[0], cache.saved[1], gy);
    Cache<T> proj_cache;
    proj_cache.saved.push_back(cache.saved[2]);
    proj_cache.ready = true;
    Tensor<T> gcond = proj_.backward(proj_cache, gmod);
    return {std::move(gx), std::move(gcond)};
  }

  std::vector<Param<T>*> params() { return proj_.params(); }
  Linear<T>& projection() { return proj_; }

 private:
  LayerSpec spec_;
  Linear<T> proj_;
};

// Builds a single-input layer from its spec. FiLM takes two inputs and is
// constructed directly as Film<T>.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case LayerKind::kConv2d: return std::make_unique<Conv2d<T>>(spec, rng);
    case LayerKind::kConv1dDilated: return std::make_unique<Conv1d<T>>(spec, rng);
    case LayerKind::kLinear: return std::make_unique<Linear<T>>(spec, rng);
    case LayerKind::kBatchNorm: return std::make_unique<BatchNorm<T>>(spec);
    case LayerKind::kRelu: return std::make_unique<Relu<T>>(spec);
    case LayerKind::kGelu: return std::make_unique<Gelu<T>>(spec);
    case LayerKind::kMaxPoolTime: return std::make_unique<MaxPoolTime<T>>(spec);
    case LayerKind::kDropout: return std::make_unique<Dropout<T>>(spec);
    case LayerKind::kFilm:
      throw std::invalid_argument(spec.label() +
                                  ": film has two inputs; construct Film<T>");
  }
  throw std::invalid_argument("unknown layer kind");
}

template <typename T>
Tensor<T> layer_forward(Layer<T>& layer, const Tensor<T>& x, Cache<T>& cache,
                        Mode mode, Rng* rng = nullptr) {
  Tensor<T> y = layer.forward(x, cache, mode, rng);
  if (x.all_finite() && !y.all_finite()) {
    throw NumericError(layer.spec().label() + ": non-finite forward output");
  }
  return y;
}

template <typename T>
Tensor<T> layer_backward(Layer<T>& layer, const Cache<T>& cache,
                         const Tensor<T>& upstream) {
  return layer.backward(cache, upstream);
}

template <typename T>
void zero_grads(const std::vector<Param<T>*>& ps) {
  for (auto* p : ps) p->zero_grad();
}

}  // namespace srirgen
