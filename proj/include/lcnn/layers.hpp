#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lcnn/tensor.hpp"

namespace lcnn {

enum class Mode { train, eval };
enum class Padding { same, valid };

/// A trainable tensor and its gradient buffer.
template <Real T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

/// Non-trainable persistent state (batch-norm running statistics).
template <Real T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

/// Batched layer. Inputs are [B x ...]; output_shape() works on per-sample shapes.
/// backward() accumulates into parameter gradients and returns dL/dx.
template <Real T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& sample) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual std::vector<ParamRef<T>> parameters() { return {}; }
  virtual std::vector<BufferRef<T>> buffers() { return {}; }

  void zero_grad() {
    for (auto& p : parameters()) p.grad->fill(T{0});
  }

  // When false, backward() may skip computing dL/dx and return an empty tensor.
  void set_needs_input_grad(bool v) noexcept { needs_input_grad_ = v; }
  bool needs_input_grad() const noexcept { return needs_input_grad_; }

 protected:
  bool needs_input_grad_ = true;
};

namespace detail {

inline void require_cache(bool present, const char* layer) {
  if (!present) throw std::logic_error(std::string(layer) + ": backward called without a forward cache");
}

inline Shape with_batch(std::size_t batch, const Shape& sample) {
  std::vector<std::size_t> dims{batch};
  dims.insert(dims.end(), sample.dims().begin(), sample.dims().end());
  return Shape(std::move(dims));
}

inline Shape drop_batch(const Shape& s) {
  if (s.rank() < 2) throw ShapeError("expected a batched tensor, got " + s.str());
  return Shape(std::vector<std::size_t>(s.dims().begin() + 1, s.dims().end()));
}

}  // namespace detail

/// Stride-1 convolution without bias; kernels are [kh x kw x C_in x S].
/// y[i,j,s] = sum_{di,dj,k} G[di,dj,k,s] * x_padded[i+di, j+dj, k].
/// Implemented as im2col followed by a GEMM per image.
template <Real T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t kernel_h, std::size_t kernel_w, std::size_t in_channels, std::size_t out_channels,
         Padding padding = Padding::same)
      : kernels_(Shape{kernel_h, kernel_w, in_channels, out_channels}),
        grad_kernels_(kernels_.shape()),
        padding_(padding) {
    if (kernel_h % 2 == 0 || kernel_w % 2 == 0) throw std::invalid_argument("Conv2d: kernel extents must be odd");
  }

  std::string kind() const override { return "conv2d"; }

  std::size_t kernel_h() const { return kernels_.dim(0); }
  std::size_t kernel_w() const { return kernels_.dim(1); }
  std::size_t in_channels() const { return kernels_.dim(2); }
  std::size_t out_channels() const { return kernels_.dim(3); }
  Padding padding() const { return padding_; }

  Tensor<T>& kernels() { return kernels_; }
  const Tensor<T>& kernels() const { return kernels_; }
  Tensor<T>& grad_kernels() { return grad_kernels_; }
  const Tensor<T>& grad_kernels() const { return grad_kernels_; }

  Shape output_shape(const Shape& s) const override {
    if (s.rank() != 3) throw ShapeError("conv2d: expected HxWxC input, got " + s.str());
    if (s[2] != in_channels())
      throw ShapeError("conv2d: input has " + std::to_string(s[2]) + " channels, kernels expect " +
                       std::to_string(in_channels()));
    if (padding_ == Padding::same) return Shape{s[0], s[1], out_channels()};
    if (s[0] < kernel_h() || s[1] < kernel_w()) throw ShapeError("conv2d: kernel larger than input " + s.str());
    return Shape{s[0] - kernel_h() + 1, s[1] - kernel_w() + 1, out_channels()};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape().rank() != 4) throw ShapeError("conv2d: expected BxHxWxC input, got " + x.shape().str());
    const Shape out_sample = output_shape(detail::drop_batch(x.shape()));
    input_ = x;
    const std::size_t batch = x.dim(0);
    const Geometry g = geometry(x.shape());
    Tensor<T> out(detail::with_batch(batch, out_sample));
    AlignedVector<T> patches(g.positions() * g.patch());
    const auto kmat = as_matrix(kernels_.data(), g.patch(), out_channels());
    for (std::size_t b = 0; b < batch; ++b) {
      im2col(x, b, g, patches);
      as_matrix(out.data() + b * g.positions() * out_channels(), g.positions(), out_channels()).noalias() =
          as_matrix(patches.data(), g.positions(), g.patch()) * kmat;
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    detail::require_cache(input_.has_value(), "conv2d");
    const Tensor<T>& x = *input_;
    const std::size_t batch = x.dim(0);
    const Geometry g = geometry(x.shape());
    if (grad_out.size() != batch * g.positions() * out_channels())
      throw ShapeError("conv2d backward: grad_out shape " + grad_out.shape().str());

    Tensor<T> grad_in;
    if (this->needs_input_grad()) grad_in = Tensor<T>(x.shape());
    AlignedVector<T> patches(g.positions() * g.patch());
    AlignedVector<T> dpatches(this->needs_input_grad() ? patches.size() : 0);
    AlignedVector<T> dpadded(this->needs_input_grad() ? g.hp * g.wp * g.c : 0);
    auto dk = as_matrix(grad_kernels_.data(), g.patch(), out_channels());
    const auto kmat = as_matrix(kernels_.data(), g.patch(), out_channels());

    for (std::size_t b = 0; b < batch; ++b) {
      im2col(x, b, g, patches);
      const auto dy = as_matrix(grad_out.data() + b * g.positions() * out_channels(), g.positions(), out_channels());
      dk.noalias() += as_matrix(patches.data(), g.positions(), g.patch()).transpose() * dy;
      if (!this->needs_input_grad()) continue;
      as_matrix(dpatches.data(), g.positions(), g.patch()).noalias() = dy * kmat.transpose();
      std::fill(dpadded.begin(), dpadded.end(), T{0});
      col2im(dpatches, g, dpadded);
      for (std::size_t i = 0; i < g.h; ++i) {
        const T* src = dpadded.data() + ((i + g.ph) * g.wp + g.pw) * g.c;
        std::copy(src, src + g.w * g.c, grad_in.data() + ((b * g.h + i) * g.w) * g.c);
      }
    }
    return grad_in;
  }

  std::vector<ParamRef<T>> parameters() override { return {{"kernels", &kernels_, &grad_kernels_}}; }

 private:
  struct Geometry {
    std::size_t h, w, c, ph, pw, hp, wp, ho, wo, kh, kw;
    std::size_t positions() const { return ho * wo; }
    std::size_t patch() const { return kh * kw * c; }
  };

  Geometry geometry(const Shape& s) const {
    Geometry g{};
    g.h = s[1];
    g.w = s[2];
    g.c = s[3];
    g.kh = kernel_h();
    g.kw = kernel_w();
    g.ph = padding_ == Padding::same ? (g.kh - 1) / 2 : 0;
    g.pw = padding_ == Padding::same ? (g.kw - 1) / 2 : 0;
    g.hp = g.h + 2 * g.ph;
    g.wp = g.w + 2 * g.pw;
    g.ho = g.hp - g.kh + 1;
    g.wo = g.wp - g.kw + 1;
    return g;
  }

  // Rows are output positions, columns are (di, dj, channel) to match the kernel layout.
  // Each (i, j, di) contributes kw*c contiguous values of the padded image.
  void im2col(const Tensor<T>& x, std::size_t b, const Geometry& g, AlignedVector<T>& patches) const {
    padded_.assign(g.hp * g.wp * g.c, T{0});
    const T* img = x.data() + b * g.h * g.w * g.c;
    for (std::size_t i = 0; i < g.h; ++i)
      std::copy(img + i * g.w * g.c, img + (i + 1) * g.w * g.c, padded_.data() + ((i + g.ph) * g.wp + g.pw) * g.c);
    const std::size_t span = g.kw * g.c;
    T* row = patches.data();
    for (std::size_t i = 0; i < g.ho; ++i)
      for (std::size_t j = 0; j < g.wo; ++j) {
        for (std::size_t di = 0; di < g.kh; ++di) {
          const T* src = padded_.data() + ((i + di) * g.wp + j) * g.c;
          std::copy(src, src + span, row + di * span);
        }
        row += g.patch();
      }
  }

  void col2im(const AlignedVector<T>& dpatches, const Geometry& g, AlignedVector<T>& dpadded) const {
    const T* row = dpatches.data();
    for (std::size_t i = 0; i < g.ho; ++i)
      for (std::size_t j = 0; j < g.wo; ++j) {
        for (std::size_t di = 0; di < g.kh; ++di)
          for (std::size_t dj = 0; dj < g.kw; ++dj) {
            const T* src = row + (di * g.kw + dj) * g.c;
            T* dst = dpadded.data() + ((i + di) * g.wp + (j + dj)) * g.c;
            for (std::size_t k = 0; k < g.c; ++k) dst[k] += src[k];
          }
        row += g.patch();
      }
  }

  Tensor<T> kernels_;
  Tensor<T> grad_kernels_;
  Padding padding_;
  std::optional<Tensor<T>> input_;
  mutable AlignedVector<T> padded_;
};

/// Non-overlapping max pooling, stride equal to the window. Output extents use
/// floor division; trailing rows/cols that do not fill a window are dropped.
template <Real T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::size_t pool_h, std::size_t pool_w) : pool_h_(pool_h), pool_w_(pool_w) {
    if (pool_h == 0 || pool_w == 0) throw std::invalid_argument("MaxPool2d: pool extents must be positive");
  }

  std::string kind() const override { return "maxpool2d"; }
  std::size_t pool_h() const { return pool_h_; }
  std::size_t pool_w() const { return pool_w_; }

  Shape output_shape(const Shape& s) const override {
    if (s.rank() != 3) throw ShapeError("maxpool2d: expected HxWxC input, got " + s.str());
    if (pool_h_ > s[0] || pool_w_ > s[1]) throw ShapeError("maxpool2d: pool larger than input " + s.str());
    return Shape{s[0] / pool_h_, s[1] / pool_w_, s[2]};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape().rank() != 4) throw ShapeError("maxpool2d: expected BxHxWxC input, got " + x.shape().str());
    const Shape os = output_shape(detail::drop_batch(x.shape()));
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t ho = os[0], wo = os[1];
    Tensor<T> out(detail::with_batch(batch, os));
    argmax_.assign(out.size(), 0);
    input_shape_ = x.shape();
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j)
          for (std::size_t k = 0; k < c; ++k, ++o) {
            std::size_t best = ((b * h + i * pool_h_) * w + j * pool_w_) * c + k;
            // row-major window scan; strict > keeps the first maximal cell
            for (std::size_t di = 0; di < pool_h_; ++di)
              for (std::size_t dj = 0; dj < pool_w_; ++dj) {
                const std::size_t idx = ((b * h + i * pool_h_ + di) * w + j * pool_w_ + dj) * c + k;
                if (x[idx] > x[best]) best = idx;
              }
            argmax_[o] = best;
            out[o] = x[best];
          }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    detail::require_cache(input_shape_.has_value(), "maxpool2d");
    if (grad_out.size() != argmax_.size()) throw ShapeError("maxpool2d backward: grad_out shape " + grad_out.shape().str());
    Tensor<T> grad_in(*input_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) grad_in[argmax_[o]] += grad_out[o];
    return grad_in;
  }

  const std::vector<std::size_t>& argmax_cache() const { return argmax_; }

 private:
  std::size_t pool_h_, pool_w_;
  std::vector<std::size_t> argmax_;
  std::optional<Shape> input_shape_;
};

/// max(0, x); the subgradient at 0 is 0.
template <Real T>
class Relu final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& s) const override { return s; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> out(x.shape());
    const T* in = x.data();
    T* o = out.data();
    for (std::size_t i = 0, n = x.size(); i < n; ++i) o[i] = in[i] > T{0} ? in[i] : T{0};
    output_ = out;
    return out;
  }

  // out > 0 exactly where x > 0, so the cached output doubles as the mask.
  Tensor<T> backward(const Tensor<T>& grad_out) override {
    detail::require_cache(output_.has_value(), "relu");
    if (grad_out.size() != output_->size()) throw ShapeError("relu backward: grad_out shape " + grad_out.shape().str());
    Tensor<T> grad_in(grad_out.shape());
    const T* y = output_->data();
    const T* g = grad_out.data();
    T* d = grad_in.data();
    for (std::size_t i = 0, n = grad_in.size(); i < n; ++i) d[i] = y[i] > T{0} ? g[i] : T{0};
    return grad_in;
  }

 private:
  std::optional<Tensor<T>> output_;
};

/// Per-channel batch normalization over every axis except the last.
/// Train mode standardizes with biased batch statistics and folds them into the
/// running estimates (running = momentum * running + (1 - momentum) * batch, with
/// the unbiased variance); eval mode uses the running estimates only.
template <Real T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.9, double eps = 1e-5)
      : gamma_(Shape{channels}, T{1}),
        beta_(Shape{channels}, T{0}),
        grad_gamma_(Shape{channels}),
        grad_beta_(Shape{channels}),
        running_mean_(Shape{channels}, T{0}),
        running_var_(Shape{channels}, T{1}),
        momentum_(momentum),
        eps_(eps) {
    if (!(momentum > 0 && momentum < 1)) throw std::invalid_argument("BatchNorm: momentum must be in (0,1)");
    if (!(eps > 0)) throw std::invalid_argument("BatchNorm: eps must be positive");
  }

  std::string kind() const override { return "batchnorm"; }
  std::size_t channels() const { return gamma_.size(); }
  double momentum() const { return momentum_; }
  double eps() const { return eps_; }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }
  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }
  Tensor<T>& grad_gamma() { return grad_gamma_; }
  Tensor<T>& grad_beta() { return grad_beta_; }

  Shape output_shape(const Shape& s) const override {
    if (s.back() != channels())
      throw ShapeError("batchnorm: input has " + std::to_string(s.back()) + " channels, expected " +
                       std::to_string(channels()));
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    const std::size_t c = channels();
    if (x.shape().rank() < 2 || x.shape().back() != c) throw ShapeError("batchnorm: bad input shape " + x.shape().str());
    if (mode == Mode::train && x.dim(0) < 2) throw std::invalid_argument("batchnorm: train mode needs batch size >= 2");
    const std::size_t n = x.size() / c;
    const T* xs = x.data();

    std::vector<double> mean(c, 0.0), var(c, 0.0);
    if (mode == Mode::train) {
      double* m = mean.data();
      double* v = var.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) m[k] += xs[i * c + k];
      for (std::size_t k = 0; k < c; ++k) m[k] /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) {
          const double d = xs[i * c + k] - m[k];
          v[k] += d * d;
        }
      const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
      for (std::size_t k = 0; k < c; ++k) {
        v[k] /= static_cast<double>(n);
        running_mean_[k] = static_cast<T>(momentum_ * running_mean_[k] + (1.0 - momentum_) * m[k]);
        running_var_[k] = static_cast<T>(momentum_ * running_var_[k] + (1.0 - momentum_) * v[k] * unbias);
      }
    } else {
      for (std::size_t k = 0; k < c; ++k) {
        mean[k] = running_mean_[k];
        var[k] = running_var_[k];
      }
    }

    inv_std_.assign(c, 0.0);
    std::vector<T> scale(c), shift(c);
    for (std::size_t k = 0; k < c; ++k) {
      inv_std_[k] = 1.0 / std::sqrt(var[k] + eps_);
      scale[k] = static_cast<T>(inv_std_[k]);
      shift[k] = static_cast<T>(-mean[k] * inv_std_[k]);
    }
    xhat_ = Tensor<T>(x.shape());
    Tensor<T> out(x.shape());
    T* xh = xhat_.data();
    T* o = out.data();
    const T* gm = gamma_.data();
    const T* bt = beta_.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t idx = i * c + k;
        xh[idx] = xs[idx] * scale[k] + shift[k];
        o[idx] = gm[k] * xh[idx] + bt[k];
      }
    cached_mode_ = mode;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    detail::require_cache(cached_mode_.has_value(), "batchnorm");
    if (grad_out.shape() != xhat_.shape()) throw ShapeError("batchnorm backward: grad_out shape " + grad_out.shape().str());
    const std::size_t c = channels(), n = xhat_.size() / c;
    const T* dy = grad_out.data();
    const T* xh = xhat_.data();
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    double* s1 = sum_dy.data();
    double* s2 = sum_dy_xhat.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t idx = i * c + k;
        s1[k] += dy[idx];
        s2[k] += static_cast<double>(dy[idx]) * xh[idx];
      }
    for (std::size_t k = 0; k < c; ++k) {
      grad_gamma_[k] += static_cast<T>(s2[k]);
      grad_beta_[k] += static_cast<T>(s1[k]);
    }
    // train: dx = gamma/sigma * (dy - mean(dy) - xhat * mean(dy * xhat)); eval: dx = gamma/sigma * dy
    const bool train = *cached_mode_ == Mode::train;
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<T> a(c), b(c), d(c);
    for (std::size_t k = 0; k < c; ++k) {
      const double g = static_cast<double>(gamma_[k]) * inv_std_[k];
      a[k] = static_cast<T>(g);
      b[k] = train ? static_cast<T>(-g * s1[k] * inv_n) : T{0};
      d[k] = train ? static_cast<T>(-g * s2[k] * inv_n) : T{0};
    }
    Tensor<T> grad_in(grad_out.shape());
    T* dx = grad_in.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t idx = i * c + k;
        dx[idx] = a[k] * dy[idx] + b[k] + d[k] * xh[idx];
      }
    return grad_in;
  }

  std::vector<ParamRef<T>> parameters() override {
    return {{"gamma", &gamma_, &grad_gamma_}, {"beta", &beta_, &grad_beta_}};
  }
  std::vector<BufferRef<T>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

 private:
  Tensor<T> gamma_, beta_, grad_gamma_, grad_beta_, running_mean_, running_var_;
  double momentum_, eps_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  std::optional<Mode> cached_mode_;
};

/// y = x W + b with W stored [fan_in x fan_out].
template <Real T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t fan_in, std::size_t fan_out)
      : weights_(Shape{fan_in, fan_out}), bias_(Shape{fan_out}), grad_weights_(weights_.shape()), grad_bias_(bias_.shape()) {}

  std::string kind() const override { return "dense"; }
  std::size_t fan_in() const { return weights_.dim(0); }
  std::size_t fan_out() const { return weights_.dim(1); }

  Tensor<T>& weights() { return weights_; }
  Tensor<T>& bias() { return bias_; }
  Tensor<T>& grad_weights() { return grad_weights_; }
  Tensor<T>& grad_bias() { return grad_bias_; }

  Shape output_shape(const Shape& s) const override {
    if (s.rank() != 1 || s[0] != fan_in())
      throw ShapeError("dense: expected " + std::to_string(fan_in()) + " features, got " + s.str());
    return Shape{fan_out()};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape().rank() != 2 || x.dim(1) != fan_in())
      throw ShapeError("dense: expected Bx" + std::to_string(fan_in()) + " input, got " + x.shape().str());
    input_ = x;
    const std::size_t batch = x.dim(0);
    Tensor<T> out(Shape{batch, fan_out()});
    auto y = as_matrix(out.data(), batch, fan_out());
    y.noalias() = as_matrix(x.data(), batch, fan_in()) * as_matrix(weights_.data(), fan_in(), fan_out());
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.data(), static_cast<Eigen::Index>(fan_out()));
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    detail::require_cache(input_.has_value(), "dense");
    const std::size_t batch = input_->dim(0);
    if (grad_out.size() != batch * fan_out()) throw ShapeError("dense backward: grad_out shape " + grad_out.shape().str());
    const auto dy = as_matrix(grad_out.data(), batch, fan_out());
    as_matrix(grad_weights_.data(), fan_in(), fan_out()).noalias() +=
        as_matrix(input_->data(), batch, fan_in()).transpose() * dy;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad_bias_.data(), static_cast<Eigen::Index>(fan_out())) += dy.colwise().sum();
    if (!this->needs_input_grad()) return {};
    Tensor<T> grad_in(Shape{batch, fan_in()});
    as_matrix(grad_in.data(), batch, fan_in()).noalias() = dy * as_matrix(weights_.data(), fan_in(), fan_out()).transpose();
    return grad_in;
  }

  std::vector<ParamRef<T>> parameters() override {
    return {{"weights", &weights_, &grad_weights_}, {"bias", &bias_, &grad_bias_}};
  }

 private:
  Tensor<T> weights_, bias_, grad_weights_, grad_bias_;
  std::optional<Tensor<T>> input_;
};

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Eval mode is the identity.
template <Real T>
class Dropout final : public Layer<T> {
 public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("Dropout: rate must be in [0,1)");
  }

  std::string kind() const override { return "dropout"; }
  double rate() const { return rate_; }
  Shape output_shape(const Shape& s) const override { return s; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    mask_.assign(x.size(), T{1});
    if (mode == Mode::train && rate_ > 0.0) {
      const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
      for (auto& m : mask_) m = rng_.bernoulli(rate_) ? T{0} : keep_scale;
    }
    cached_ = true;
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask_[i];
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    detail::require_cache(cached_, "dropout");
    if (grad_out.size() != mask_.size()) throw ShapeError("dropout backward: grad_out shape " + grad_out.shape().str());
    Tensor<T> grad_in(grad_out.shape());
    for (std::size_t i = 0; i < mask_.size(); ++i) grad_in[i] = grad_out[i] * mask_[i];
    return grad_in;
  }

  const std::vector<T>& mask() const { return mask_; }

 private:
  double rate_;
  Rng rng_;
  std::vector<T> mask_;
  bool cached_ = false;
};

template <Real T>
class Flatten final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Shape output_shape(const Shape& s) const override { return Shape{s.numel()}; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    input_shape_ = x.shape();
    return x.reshaped(Shape{x.dim(0), x.size() / x.dim(0)});
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    detail::require_cache(input_shape_.has_value(), "flatten");
    return grad_out.reshaped(*input_shape_);
  }

 private:
  std::optional<Shape> input_shape_;
};

}  // namespace lcnn
