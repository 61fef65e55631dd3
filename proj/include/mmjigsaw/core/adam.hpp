#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/tensor.hpp"

namespace mmjigsaw {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool checked = true;  // reject non-finite gradients
};

// First and second moments per parameter tensor, zero-initialised lazily on
// the first step.
template <class T>
struct AdamState {
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;
  std::uint64_t step = 0;
};

template <class T>
void adam_step(std::span<BasicTensor<T>* const> params,
               std::span<const BasicTensor<T>* const> grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameter tensors but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state size mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->require_same_shape(*grads[k], "adam_step");
    if (cfg.checked) grads[k]->require_finite("adam_step gradient #" + std::to_string(k));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k]->data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

// Convenience overload for parameter structs exposing tensors().
template <class P, class T>
void adam_step(P& params, const P& grads, AdamState<T>& state, const AdamConfig& cfg) {
  const std::vector<BasicTensor<T>*> ps = params.tensors();
  const std::vector<const BasicTensor<T>*> gs = grads.tensors();
  adam_step<T>(std::span<BasicTensor<T>* const>(ps), std::span<const BasicTensor<T>* const>(gs),
               state, cfg);
}

}  // namespace mmjigsaw
