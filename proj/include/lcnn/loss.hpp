#pragma once

#include <algorithm>
#include <cmath>

#include "lcnn/tensor.hpp"

namespace lcnn {

/// Predictions are clamped into [kProbClamp, 1 - kProbClamp] before taking logs.
inline constexpr double kProbClamp = 1e-7;

template <Real T>
T sigmoid(T z) {
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

template <Real T>
Tensor<T> sigmoid(const Tensor<T>& z) {
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = sigmoid(z[i]);
  return out;
}

inline void check_label(double y) {
  if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce: label must be 0 or 1");
}

/// -(y log p + (1 - y) log(1 - p)) with p clamped.
inline double bce(double y_true, double y_pred) {
  check_label(y_true);
  const double p = std::clamp(y_pred, kProbClamp, 1.0 - kProbClamp);
  return -(y_true * std::log(p) + (1.0 - y_true) * std::log(1.0 - p));
}

template <Real T>
struct LossValue {
  double value = 0.0;
  // Gradient of `value` (the batch mean) with respect to each logit: (p - y) / B.
  Tensor<T> grad_wrt_logit;
};

/// Mean binary cross-entropy over a batch of logits, fused with the sigmoid so
/// the logit gradient is the stable p - y form.
template <Real T>
LossValue<T> bce_loss(const Tensor<T>& labels, const Tensor<T>& logits) {
  if (labels.size() != logits.size()) throw ShapeError("bce_loss: labels/logits size mismatch");
  if (logits.size() == 0) throw std::invalid_argument("bce_loss: empty batch");
  LossValue<T> out{0.0, Tensor<T>(logits.shape())};
  const double inv_b = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = sigmoid(static_cast<double>(logits[i]));
    out.value += bce(labels[i], p);
    out.grad_wrt_logit[i] = static_cast<T>((p - labels[i]) * inv_b);
  }
  out.value *= inv_b;
  return out;
}

}  // namespace lcnn
