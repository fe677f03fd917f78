#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "lcnn/layers.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

struct AdamConfig {
  double eta = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <Real T>
struct AdamState {
  std::uint64_t t = 0;
  Tensor<T> m;
  Tensor<T> v;

  explicit AdamState(const Shape& shape) : m(shape), v(shape) {}
};

/// One bias-corrected Adam update, in place.
template <Real T>
void adam_step(Tensor<T>& params, const Tensor<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
  if (params.shape() != grads.shape() || params.shape() != state.m.shape())
    throw ShapeError("adam_step: shape mismatch " + params.shape().str() + " / " + grads.shape().str());
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.eta / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.eps);
  T* p = params.data();
  const T* g = grads.data();
  T* m = state.m.data();
  T* v = state.v.data();
  for (std::size_t i = 0, n = params.size(); i < n; ++i) {
    m[i] = b1 * m[i] + (T{1} - b1) * g[i];
    v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
    p[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
  }
}

struct SgdConfig {
  double eta = 0.005;
};

template <Real T>
void sgd_step(Tensor<T>& params, const Tensor<T>& grads, const SgdConfig& cfg) {
  if (params.shape() != grads.shape()) throw ShapeError("sgd_step: shape mismatch");
  const T eta = static_cast<T>(cfg.eta);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= eta * grads[i];
}

enum class OptimizerKind { adam, sgd };

/// Applies one optimizer to a fixed list of parameters.
template <Real T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double eta, std::vector<ParamRef<T>> params)
      : kind_(kind), adam_{.eta = eta}, sgd_{.eta = eta}, params_(std::move(params)) {
    if (!(eta > 0)) throw std::invalid_argument("optimizer: learning rate must be positive");
    if (kind_ == OptimizerKind::adam)
      for (const auto& p : params_) states_.emplace_back(p.value->shape());
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (kind_ == OptimizerKind::adam)
        adam_step(*params_[i].value, *params_[i].grad, states_[i], adam_);
      else
        sgd_step(*params_[i].value, *params_[i].grad, sgd_);
    }
  }

  OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  AdamConfig adam_;
  SgdConfig sgd_;
  std::vector<ParamRef<T>> params_;
  std::vector<AdamState<T>> states_;
};

}  // namespace lcnn
