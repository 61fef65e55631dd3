#pragma once

// Five-layer convolutional encoder shared by the puzzle solver and the
// downstream segmentation model. Every conv is followed by a parameter-free
// per-sample normalisation (unless disabled) and a ReLU.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/layers.hpp"
#include "mmjigsaw/core/ops.hpp"

namespace mmjigsaw {

inline constexpr std::size_t kEncoderDepth = 5;

struct EncoderArch {
  std::size_t input_side = 12;  // patches are resized to input_side x input_side
  std::size_t in_channels = 1;
  std::array<std::size_t, kEncoderDepth> channels{16, 32, 32, 64, 64};
  std::array<std::size_t, kEncoderDepth> kernels{3, 3, 3, 3, 3};
  std::array<std::size_t, kEncoderDepth> strides{1, 2, 1, 2, 1};
  bool normalize = true;

  friend bool operator==(const EncoderArch&, const EncoderArch&) = default;
};

template <class T>
using EncoderLayers = std::array<ConvLayer<T>, kEncoderDepth>;

template <class T>
EncoderLayers<T> make_encoder(const EncoderArch& arch, std::size_t in_channels) {
  EncoderLayers<T> layers;
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    if (arch.channels[i] == 0 || arch.kernels[i] == 0 || arch.strides[i] == 0) {
      throw ConfigError("encoder layer " + std::to_string(i + 1) + " has a zero extent");
    }
    layers[i] = ConvLayer<T>::make(in, arch.channels[i], arch.kernels[i], arch.strides[i]);
    in = arch.channels[i];
  }
  return layers;
}

template <class T>
struct EncoderTrace {
  BasicTensor<T> input;
  bool normalize = true;
  std::array<BasicTensor<T>, kEncoderDepth> normed;  // post-normalisation, pre-ReLU
  std::array<NormStats<T>, kEncoderDepth> stats;
  std::array<BasicTensor<T>, kEncoderDepth> acts;  // post-ReLU outputs
};

// conv -> [norm] -> ReLU, recording what the backward pass needs.
template <class T>
BasicTensor<T> conv_block_forward(const ConvLayer<T>& layer, const BasicTensor<T>& x, bool normalize,
                                  BasicTensor<T>& normed, NormStats<T>& stats) {
  BasicTensor<T> pre = layer.forward(x);
  if (normalize) pre = layer_norm(pre, stats);
  normed = pre;
  return relu(pre);
}

// Returns d/d(input) of the block when `want_input` is set.
template <class T>
BasicTensor<T> conv_block_backward(const ConvLayer<T>& layer, const BasicTensor<T>& x, bool normalize,
                                   const BasicTensor<T>& normed, const NormStats<T>& stats,
                                   const BasicTensor<T>& act, BasicTensor<T> g, ConvLayer<T>& grads,
                                   bool want_input) {
  relu_backward(act, g);
  if (normalize) g = layer_norm_backward(normed, stats, g);
  return layer.backward(x, g, grads, want_input);
}

template <class T>
EncoderTrace<T> encoder_forward(const EncoderLayers<T>& layers, BasicTensor<T> input, bool normalize) {
  EncoderTrace<T> tr;
  tr.input = std::move(input);
  tr.normalize = normalize;
  const BasicTensor<T>* x = &tr.input;
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    tr.acts[i] = conv_block_forward(layers[i], *x, normalize, tr.normed[i], tr.stats[i]);
    x = &tr.acts[i];
  }
  return tr;
}

// `level_grads[i]` is d(loss)/d(acts[i]) from outside the encoder (an empty
// tensor means none). Parameter gradients accumulate into `grads`.
template <class T>
void encoder_backward(const EncoderLayers<T>& layers, const EncoderTrace<T>& tr,
                      std::array<BasicTensor<T>, kEncoderDepth> level_grads, EncoderLayers<T>& grads) {
  BasicTensor<T> g;
  for (std::size_t i = kEncoderDepth; i-- > 0;) {
    if (!level_grads[i].empty()) {
      if (g.empty()) {
        g = std::move(level_grads[i]);
      } else {
        g += level_grads[i];
      }
    }
    if (g.empty()) continue;
    const BasicTensor<T>& x = i == 0 ? tr.input : tr.acts[i - 1];
    g = conv_block_backward(layers[i], x, tr.normalize, tr.normed[i], tr.stats[i], tr.acts[i],
                            std::move(g), grads[i], i > 0);
  }
}

}  // namespace mmjigsaw
