#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// The reference kernels below use plain loops only.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lcnn/lcnn.hpp"

namespace oracle {

using lcnn::Shape;
using lcnn::Tensor;

/// Direct nested-loop convolution, stride 1. x [B,H,W,C], k [kh,kw,C,S].
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& k, bool same) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), S = k.dim(3);
  const std::ptrdiff_t ph = same ? static_cast<std::ptrdiff_t>(kh / 2) : 0;
  const std::ptrdiff_t pw = same ? static_cast<std::ptrdiff_t>(kw / 2) : 0;
  const std::size_t Ho = same ? H : H - kh + 1, Wo = same ? W : W - kw + 1;
  Tensor<double> y(Shape{B, Ho, Wo, S});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j)
        for (std::size_t s = 0; s < S; ++s) {
          double acc = 0.0;
          for (std::size_t di = 0; di < kh; ++di)
            for (std::size_t dj = 0; dj < kw; ++dj) {
              const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i + di) - ph;
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j + dj) - pw;
              if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W)) continue;
              for (std::size_t c = 0; c < C; ++c)
                acc += x.at(b, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c) * k.at(di, dj, c, s);
            }
          y.at(b, i, j, s) = acc;
        }
  return y;
}

/// Windowed maximum with floor division of the extents.
inline Tensor<double> maxpool2d(const Tensor<double>& x, std::size_t p) {
  const std::size_t B = x.dim(0), H = x.dim(1) / p, W = x.dim(2) / p, C = x.dim(3);
  Tensor<double> y(Shape{B, H, W, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t c = 0; c < C; ++c) {
          double m = -INFINITY;
          for (std::size_t di = 0; di < p; ++di)
            for (std::size_t dj = 0; dj < p; ++dj) m = std::max(m, x.at(b, i * p + di, j * p + dj, c));
          y.at(b, i, j, c) = m;
        }
  return y;
}

/// Central finite difference of f with respect to every element of v (restored afterwards).
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor<double>& v, double h = 1e-6) {
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double fp = f();
    v[i] = orig - h;
    const double fm = f();
    v[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a|| + ||b||, tiny): the usual gradient-check relative error.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(na) + std::sqrt(nb);
  return den < 1e-300 ? 0.0 : std::sqrt(diff) / den;
}

struct GradErrors {
  double input = 0.0;
  double params = 0.0;
};

/// Checks a layer's backward against finite differences of L = sum(forward(x) * r)
/// for a fixed random r, both for dL/dx and for every parameter.
inline GradErrors check_layer_gradients(lcnn::Layer<double>& layer, Tensor<double> x, lcnn::Mode mode, lcnn::Rng& rng) {
  const Tensor<double> probe = layer.forward(x, mode);
  const Tensor<double> r = lcnn::tensor_random<double>(probe.shape(), lcnn::Uniform{-1.0, 1.0}, rng);
  auto loss = [&] {
    const auto y = layer.forward(x, mode);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  layer.zero_grad();
  layer.forward(x, mode);
  const auto dx = layer.backward(r);
  std::vector<double> analytic_p, numeric_p;
  for (auto& p : layer.parameters()) {
    analytic_p.insert(analytic_p.end(), p.grad->values().begin(), p.grad->values().end());
    const auto g = numeric_gradient(loss, *p.value);
    numeric_p.insert(numeric_p.end(), g.begin(), g.end());
  }
  const auto numeric_x = numeric_gradient(loss, x);
  GradErrors e;
  e.input = relative_error(dx.values(), numeric_x);
  e.params = relative_error(analytic_p, numeric_p);
  return e;
}

/// End-to-end check of every model parameter against finite differences of the
/// mean BCE, with the model in eval mode (batch norm frozen, dropout off).
/// Returns the worst per-tensor relative error.
inline double check_model_gradients(lcnn::Model<double>& model, const Tensor<double>& x, const Tensor<double>& labels) {
  auto loss = [&] { return lcnn::bce_loss(labels, model.forward(x, lcnn::Mode::eval)).value; };
  model.zero_grad();
  const auto out = lcnn::bce_loss(labels, model.forward(x, lcnn::Mode::eval));
  model.backward(out.grad_wrt_logit);
  double worst = 0.0;
  for (auto& p : model.parameters()) {
    const auto numeric = numeric_gradient(loss, *p.value);
    worst = std::max(worst, relative_error(p.grad->values(), numeric));
  }
  return worst;
}

/// Metrics by enumerating a synthetic prediction list rather than from counts.
struct BruteMetrics {
  double accuracy = NAN, specificity = NAN, recall = NAN, precision = NAN, f1 = NAN;
};

inline BruteMetrics brute_metrics(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn) {
  std::vector<std::pair<int, int>> rows;  // (truth, prediction)
  rows.insert(rows.end(), tp, {1, 1});
  rows.insert(rows.end(), tn, {0, 0});
  rows.insert(rows.end(), fp, {0, 1});
  rows.insert(rows.end(), fn, {1, 0});
  double correct = 0, pos = 0, neg = 0, pred_pos = 0, hit = 0, rej = 0;
  for (auto [t, p] : rows) {
    correct += (t == p);
    pos += (t == 1);
    neg += (t == 0);
    pred_pos += (p == 1);
    hit += (t == 1 && p == 1);
    rej += (t == 0 && p == 0);
  }
  BruteMetrics m;
  if (!rows.empty()) m.accuracy = correct / static_cast<double>(rows.size());
  if (neg > 0) m.specificity = rej / neg;
  if (pos > 0) m.recall = hit / pos;
  if (pred_pos > 0) m.precision = hit / pred_pos;
  if (!std::isnan(m.precision) && !std::isnan(m.recall) && m.precision + m.recall > 0)
    m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

/// Trainable parameter count of the default architecture, counted per layer by hand.
inline std::size_t low_complexity_param_count(std::size_t s2) {
  const std::size_t conv1 = 9 * 9 * 1 * 32;
  const std::size_t bn1 = 2 * 32;
  const std::size_t conv2 = 5 * 5 * 32 * s2;
  const std::size_t bn2 = 2 * s2;
  const std::size_t spatial = ((100 / 4) / 4);  // 100 -> 25 -> 6
  const std::size_t flat = spatial * spatial * s2;
  const std::size_t fc1 = flat * 4096 + 4096;
  const std::size_t fc2 = 4096 * 1024 + 1024;
  const std::size_t fc3 = 1024 * 1 + 1;
  return conv1 + bn1 + conv2 + bn2 + fc1 + fc2 + fc3;
}

}  // namespace oracle
