#pragma once

// Downstream segmentation model: the 5-level solver encoder on stacked
// modalities plus a 5-conv decoder with nearest-neighbour upsampling and
// skip concatenation. The last decoder conv emits per-class logits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/layers.hpp"
#include "mmjigsaw/core/ops.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/solver/encoder.hpp"
#include "mmjigsaw/solver/solver.hpp"

namespace mmjigsaw {

inline constexpr std::size_t kDecoderDepth = 5;

template <class T>
struct BasicSegModel {
  EncoderArch arch;
  std::size_t in_channels = 1;
  std::size_t classes = 2;
  EncoderLayers<T> encoder;
  std::array<ConvLayer<T>, kDecoderDepth> decoder;

  // Decoder layer 0 reads enc5; layer k > 0 reads up(dec[k-1]) ++ enc[5-k],
  // upsampled to the skip's extent. Layer 4 emits logits.
  static BasicSegModel make(const EncoderArch& arch, std::size_t in_channels, std::size_t classes) {
    if (in_channels == 0) throw ConfigError("segmentation model needs at least one input channel");
    if (classes < 2) throw ConfigError("segmentation model needs at least two classes");
    BasicSegModel m;
    m.arch = arch;
    m.in_channels = in_channels;
    m.classes = classes;
    m.encoder = make_encoder<T>(arch, in_channels);
    const auto& c = arch.channels;
    const std::size_t k = arch.kernels[0];
    m.decoder[0] = ConvLayer<T>::make(c[4], c[3], k, 1);
    m.decoder[1] = ConvLayer<T>::make(c[3] + c[3], c[2], k, 1);
    m.decoder[2] = ConvLayer<T>::make(c[2] + c[2], c[1], k, 1);
    m.decoder[3] = ConvLayer<T>::make(c[1] + c[1], c[0], k, 1);
    m.decoder[4] = ConvLayer<T>::make(c[0] + c[0], classes, k, 1);
    return m;
  }

  std::vector<BasicTensor<T>*> tensors() {
    std::vector<BasicTensor<T>*> out;
    for (auto& l : encoder) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    for (auto& l : decoder) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
  std::vector<const BasicTensor<T>*> tensors() const {
    std::vector<const BasicTensor<T>*> out;
    for (const auto* t : const_cast<BasicSegModel*>(this)->tensors()) out.push_back(t);
    return out;
  }
  std::vector<const BasicTensor<T>*> weight_tensors() const {
    std::vector<const BasicTensor<T>*> out;
    for (const auto& l : encoder) out.push_back(&l.weight);
    for (const auto& l : decoder) out.push_back(&l.weight);
    return out;
  }
  std::vector<BasicTensor<T>*> weight_tensors() {
    std::vector<BasicTensor<T>*> out;
    for (auto& l : encoder) out.push_back(&l.weight);
    for (auto& l : decoder) out.push_back(&l.weight);
    return out;
  }
  BasicSegModel zeros_like() const {
    BasicSegModel g = *this;
    for (auto* t : g.tensors()) t->fill(T{0});
    return g;
  }

  friend bool operator==(const BasicSegModel& a, const BasicSegModel& b) {
    if (!(a.arch == b.arch) || a.in_channels != b.in_channels || a.classes != b.classes) return false;
    const auto ta = a.tensors(), tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }
};

using SegModel = BasicSegModel<float>;

// Every layer ~ N(mean, stddev), biases zero. Encoder layer i draws from
// rng.substream(i), decoder layer k from rng.substream(10 + k).
template <class T = float>
BasicSegModel<T> init_seg_model(const EncoderArch& arch, std::size_t in_channels, std::size_t classes, Rng rng,
                                const InitConfig& init = {}) {
  auto m = BasicSegModel<T>::make(arch, in_channels, classes);
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    Rng r = rng.substream(i);
    m.encoder[i].init_normal(r, init.mean, init.stddev);
  }
  for (std::size_t k = 0; k < kDecoderDepth; ++k) {
    Rng r = rng.substream(10 + k);
    m.decoder[k].init_normal(r, init.mean, init.stddev);
  }
  return m;
}

enum class AdaptMode { copy, copy_scaled };

// Replicates a pretrained [O, 1, k, k] input kernel across m input channels.
// copy_scaled divides by m so identical channels reproduce the original
// pre-activation.
template <class T>
BasicTensor<T> adapt_input_layer(const BasicTensor<T>& w, std::size_t m, AdaptMode mode) {
  if (m == 0) throw ConfigError("adapt_input_layer: target channel count must be >= 1");
  if (w.rank() != 4 || w.dim(1) != 1) {
    throw DimensionError("adapt_input_layer: expected a single-channel kernel [O,1,k,k], got " +
                         shape_str(w.shape()));
  }
  const std::size_t o = w.dim(0), kk = w.dim(2) * w.dim(3);
  BasicTensor<T> out({o, m, w.dim(2), w.dim(3)});
  const T scale = mode == AdaptMode::copy_scaled ? static_cast<T>(1.0 / static_cast<double>(m)) : T{1};
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t j = 0; j < kk; ++j) out[(oc * m + c) * kk + j] = w[oc * kk + j] * scale;
  return out;
}

// Copies the solver encoder into `seg` (input layer adapted to the model's
// channel count); the decoder is left untouched.
template <class T>
BasicSegModel<T> transplant(const BasicSolverParams<T>& solver, BasicSegModel<T> seg, AdaptMode mode) {
  if (solver.arch.normalize != seg.arch.normalize) {
    throw DimensionError("transplant: solver and segmentation encoders disagree on normalisation");
  }
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    const auto& src = solver.encoder[i];
    auto& dst = seg.encoder[i];
    BasicTensor<T> w = src.weight;
    if (i == 0 && src.weight.rank() == 4 && src.weight.dim(1) == 1 && dst.weight.dim(1) != 1) {
      w = adapt_input_layer(src.weight, dst.weight.dim(1), mode);
    }
    if (w.shape() != dst.weight.shape() || src.bias.shape() != dst.bias.shape() || src.stride != dst.stride ||
        src.pad != dst.pad) {
      throw DimensionError("transplant: encoder layer " + std::to_string(i + 1) + " is incompatible (solver " +
                           shape_str(w.shape()) + " stride " + std::to_string(src.stride) + ", model " +
                           shape_str(dst.weight.shape()) + " stride " + std::to_string(dst.stride) + ")");
    }
    dst.weight = std::move(w);
    dst.bias = src.bias;
  }
  return seg;
}

template <class T>
struct SegTrace {
  EncoderTrace<T> enc;
  std::array<BasicTensor<T>, kDecoderDepth> inputs;  // decoder layer inputs
  std::array<BasicTensor<T>, kDecoderDepth - 1> normed;
  std::array<NormStats<T>, kDecoderDepth - 1> stats;
  std::array<BasicTensor<T>, kDecoderDepth - 1> acts;
  BasicTensor<T> logits;  // [classes, H, W]
};

template <class T>
SegTrace<T> seg_forward(const BasicSegModel<T>& m, const BasicTensor<T>& image) {
  if (image.rank() != 3 || image.dim(0) != m.in_channels) {
    throw DimensionError("segmentation input must be [" + std::to_string(m.in_channels) + ",H,W], got " +
                         shape_str(image.shape()));
  }
  SegTrace<T> t;
  t.enc = encoder_forward(m.encoder, image, m.arch.normalize);
  const auto& e = t.enc.acts;
  auto block = [&](std::size_t k) {
    t.acts[k] = conv_block_forward(m.decoder[k], t.inputs[k], m.arch.normalize, t.normed[k], t.stats[k]);
  };
  t.inputs[0] = e[4];
  block(0);
  for (std::size_t k = 1; k < kDecoderDepth; ++k) {
    const auto& skip = e[kEncoderDepth - 1 - k];
    t.inputs[k] = concat_channels(upsample_nearest(t.acts[k - 1], skip.dim(1), skip.dim(2)), skip);
    if (k + 1 < kDecoderDepth) block(k);
  }
  t.logits = m.decoder[4].forward(t.inputs[4]);
  return t;
}

template <class T>
void seg_backward(const BasicSegModel<T>& m, const SegTrace<T>& t, const BasicTensor<T>& grad_logits,
                  BasicSegModel<T>& grads) {
  std::array<BasicTensor<T>, kEncoderDepth> level{};
  BasicTensor<T> g = m.decoder[4].backward(t.inputs[4], grad_logits, grads.decoder[4]);
  for (std::size_t k = kDecoderDepth - 1; k >= 1; --k) {
    auto [gup, gskip] = split_channels(g, t.acts[k - 1].dim(0));
    level[kEncoderDepth - 1 - k] = std::move(gskip);
    g = conv_block_backward(m.decoder[k - 1], t.inputs[k - 1], m.arch.normalize, t.normed[k - 1],
                            t.stats[k - 1], t.acts[k - 1], upsample_nearest_backward(t.acts[k - 1].shape(), gup),
                            grads.decoder[k - 1], true);
  }
  level[kEncoderDepth - 1] = std::move(g);
  encoder_backward(m.encoder, t.enc, std::move(level), grads.encoder);
}

// Per-pixel argmax over the class axis; ties go to the lowest class.
template <class T>
std::vector<std::uint8_t> predict_mask(const BasicTensor<T>& logits) {
  const std::size_t c = logits.dim(0), px = logits.dim(1) * logits.dim(2);
  std::vector<std::uint8_t> out(px, 0);
  for (std::size_t i = 0; i < px; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits[k * px + i] > logits[best * px + i]) best = k;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace mmjigsaw
