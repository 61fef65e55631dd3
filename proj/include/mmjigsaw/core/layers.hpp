#pragma once

#include <cstddef>
#include <vector>

#include "mmjigsaw/core/ops.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/core/tensor.hpp"

namespace mmjigsaw {

template <class T>
struct ConvLayer {
  BasicTensor<T> weight;  // [out, in, k, k]
  BasicTensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t pad = 0;

  static ConvLayer make(std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
    return {BasicTensor<T>({out, in, k, k}), BasicTensor<T>({out}), stride, k / 2};
  }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }

  BasicTensor<T> forward(const BasicTensor<T>& x) const {
    BasicTensor<T> y = conv2d(x, weight, stride, pad);
    add_channel_bias(y, bias);
    return y;
  }

  // Accumulates parameter gradients into `grads`; returns d/d(input) when
  // `want_input` is set (otherwise an empty tensor).
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out, ConvLayer& grads,
                          bool want_input = true) const {
    BasicTensor<T> gx;
    if (want_input) gx = BasicTensor<T>(x.shape());
    conv2d_backward(x, weight, grad_out, stride, pad, want_input ? &gx : nullptr, &grads.weight);
    channel_bias_backward(grad_out, grads.bias);
    return gx;
  }

  ConvLayer zeros_like() const {
    return {BasicTensor<T>(weight.shape()), BasicTensor<T>(bias.shape()), stride, pad};
  }

  void init_normal(Rng& rng, double mean, double stddev) {
    for (auto& w : weight.data()) w = static_cast<T>(rng.normal(mean, stddev));
    bias.fill(T{0});
  }
};

template <class T>
struct DenseLayer {
  BasicTensor<T> weight;  // [out, in]
  BasicTensor<T> bias;    // [out]

  static DenseLayer make(std::size_t in, std::size_t out) {
    return {BasicTensor<T>({out, in}), BasicTensor<T>({out})};
  }
  BasicTensor<T> forward(const BasicTensor<T>& x) const { return dense(x, weight, bias); }
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out, DenseLayer& grads) const {
    BasicTensor<T> gx(x.shape());
    dense_backward(x, weight, grad_out, &gx, &grads.weight, &grads.bias);
    return gx;
  }
  DenseLayer zeros_like() const { return {BasicTensor<T>(weight.shape()), BasicTensor<T>(bias.shape())}; }
  void init_normal(Rng& rng, double mean, double stddev) {
    for (auto& w : weight.data()) w = static_cast<T>(rng.normal(mean, stddev));
    bias.fill(T{0});
  }
};

// L2 penalty lambda * mean(w^2) over the given weight tensors, and its
// gradient accumulated into the matching gradient tensors.
template <class T>
double l2_penalty(const std::vector<const BasicTensor<T>*>& weights, double lambda) {
  double ss = 0.0;
  std::size_t count = 0;
  for (const auto* w : weights) {
    ss += sum_squares(*w);
    count += w->size();
  }
  return count == 0 ? 0.0 : lambda * ss / static_cast<double>(count);
}

template <class T>
void l2_penalty_backward(const std::vector<const BasicTensor<T>*>& weights,
                         const std::vector<BasicTensor<T>*>& grads, double lambda, double scale = 1.0) {
  std::size_t count = 0;
  for (const auto* w : weights) count += w->size();
  if (count == 0 || lambda == 0.0) return;
  const double k = scale * 2.0 * lambda / static_cast<double>(count);
  for (std::size_t t = 0; t < weights.size(); ++t) {
    auto w = weights[t]->data();
    auto g = grads[t]->data();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += static_cast<T>(k * static_cast<double>(w[i]));
  }
}

template <class T>
void scale_tensors(const std::vector<BasicTensor<T>*>& ts, T s) {
  for (auto* t : ts) *t *= s;
}

}  // namespace mmjigsaw
