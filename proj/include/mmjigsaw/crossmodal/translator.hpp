#pragma once

// Paired modality translation G: A -> B trained with
//   min_G max_D  L_cGAN(G, D) + lambda * L_L1(G)
// at desk scale. The generator is a 3-level encoder-decoder with skip
// connections and a linear output; the discriminator is a 3-layer
// convolutional patch classifier over the concatenated (A, B) pair.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmjigsaw/core/adam.hpp"
#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/layers.hpp"
#include "mmjigsaw/core/ops.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/puzzle/volume.hpp"

namespace mmjigsaw {

inline constexpr double kGanEps = 1e-7;

struct CganLosses {
  double generator = 0.0;      // adversarial + lambda * l1
  double discriminator = 0.0;
  double adversarial = 0.0;
  double l1 = 0.0;
};

// d_real / d_fake are discriminator probabilities (any shape); they are
// clamped to [eps, 1 - eps] before the logs.
template <class T>
CganLosses cgan_losses(const BasicTensor<T>& g_out, const BasicTensor<T>& real_b,
                       const BasicTensor<T>& d_real, const BasicTensor<T>& d_fake, double lambda,
                       double adversarial_weight = 1.0) {
  g_out.require_same_shape(real_b, "cgan_losses");
  auto clamp = [](double s) { return std::clamp(s, kGanEps, 1.0 - kGanEps); };
  CganLosses r;
  double d = 0.0;
  for (T s : d_real.data()) d -= std::log(clamp(static_cast<double>(s)));
  double df = 0.0, adv = 0.0;
  for (T s : d_fake.data()) {
    df -= std::log(1.0 - clamp(static_cast<double>(s)));
    adv -= std::log(clamp(static_cast<double>(s)));
  }
  if (!d_real.empty()) d /= static_cast<double>(d_real.size());
  if (!d_fake.empty()) {
    df /= static_cast<double>(d_fake.size());
    adv /= static_cast<double>(d_fake.size());
  }
  r.discriminator = d + df;
  r.adversarial = adv;
  double l1 = 0.0;
  for (std::size_t i = 0; i < g_out.size(); ++i) {
    l1 += std::abs(static_cast<double>(g_out[i]) - static_cast<double>(real_b[i]));
  }
  r.l1 = g_out.empty() ? 0.0 : l1 / static_cast<double>(g_out.size());
  r.generator = adversarial_weight * adv + lambda * r.l1;
  return r;
}

struct TranslatorArch {
  std::size_t base_channels = 16;
  std::size_t disc_channels = 8;
  friend bool operator==(const TranslatorArch&, const TranslatorArch&) = default;
};

template <class T>
struct Generator {
  ConvLayer<T> e1, e2, e3, d2, d1, out;

  static Generator make(const TranslatorArch& a) {
    const std::size_t c = a.base_channels;
    return {ConvLayer<T>::make(1, c, 3, 1),         ConvLayer<T>::make(c, 2 * c, 3, 2),
            ConvLayer<T>::make(2 * c, 4 * c, 3, 2), ConvLayer<T>::make(6 * c, 2 * c, 3, 1),
            ConvLayer<T>::make(3 * c, c, 3, 1),     ConvLayer<T>::make(c, 1, 3, 1)};
  }
  std::vector<ConvLayer<T>*> layers() { return {&e1, &e2, &e3, &d2, &d1, &out}; }
  std::vector<const ConvLayer<T>*> layers() const { return {&e1, &e2, &e3, &d2, &d1, &out}; }
};

template <class T>
struct Discriminator {
  ConvLayer<T> c1, c2, c3;

  static Discriminator make(const TranslatorArch& a) {
    const std::size_t c = a.disc_channels;
    return {ConvLayer<T>::make(2, c, 3, 2), ConvLayer<T>::make(c, 2 * c, 3, 2),
            ConvLayer<T>::make(2 * c, 1, 3, 1)};
  }
  std::vector<ConvLayer<T>*> layers() { return {&c1, &c2, &c3}; }
  std::vector<const ConvLayer<T>*> layers() const { return {&c1, &c2, &c3}; }
};

template <class T>
std::vector<BasicTensor<T>*> layer_tensors(const std::vector<ConvLayer<T>*>& ls) {
  std::vector<BasicTensor<T>*> out;
  for (auto* l : ls) {
    out.push_back(&l->weight);
    out.push_back(&l->bias);
  }
  return out;
}

template <class T>
std::vector<const BasicTensor<T>*> layer_tensors(const std::vector<const ConvLayer<T>*>& ls) {
  std::vector<const BasicTensor<T>*> out;
  for (const auto* l : ls) {
    out.push_back(&l->weight);
    out.push_back(&l->bias);
  }
  return out;
}

// Adam update of one network half (generator or discriminator).
template <class Net, class T>
void adam_step_net(Net& net, const Net& grads, AdamState<T>& state, const AdamConfig& cfg) {
  const auto ps = layer_tensors(net.layers());
  const auto gs = layer_tensors(grads.layers());
  adam_step<T>(std::span<BasicTensor<T>* const>(ps), std::span<const BasicTensor<T>* const>(gs), state, cfg);
}

template <class T>
struct BasicTranslatorParams {
  TranslatorArch arch;
  Generator<T> generator;
  Discriminator<T> discriminator;
  double lambda = 100.0;
  std::uint64_t trained_steps = 0;  // 0 marks an untrained translator

  static BasicTranslatorParams make(const TranslatorArch& arch, double lambda = 100.0) {
    if (lambda < 0.0) throw ConfigError("crossmodal lambda must be >= 0");
    return {arch, Generator<T>::make(arch), Discriminator<T>::make(arch), lambda, 0};
  }

  // Declaration order: generator (e1..out) then discriminator (c1..c3),
  // weight before bias.
  std::vector<BasicTensor<T>*> tensors() {
    auto out = layer_tensors(generator.layers());
    for (auto* t : layer_tensors(discriminator.layers())) out.push_back(t);
    return out;
  }
  std::vector<const BasicTensor<T>*> tensors() const {
    auto out = layer_tensors(generator.layers());
    for (const auto* t : layer_tensors(discriminator.layers())) out.push_back(t);
    return out;
  }

  friend bool operator==(const BasicTranslatorParams& a, const BasicTranslatorParams& b) {
    if (!(a.arch == b.arch) || a.lambda != b.lambda || a.trained_steps != b.trained_steps) return false;
    const auto ta = a.tensors(), tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }
};

using TranslatorParams = BasicTranslatorParams<float>;

template <class T = float>
BasicTranslatorParams<T> init_translator(const TranslatorArch& arch, Rng rng, double lambda = 100.0,
                                         double mean = 0.0, double stddev = 0.02) {
  auto p = BasicTranslatorParams<T>::make(arch, lambda);
  std::size_t k = 0;
  for (auto* l : p.generator.layers()) {
    Rng r = rng.substream(k++);
    l->init_normal(r, mean, stddev);
  }
  for (auto* l : p.discriminator.layers()) {
    Rng r = rng.substream(k++);
    l->init_normal(r, mean, stddev);
  }
  return p;
}

inline constexpr double kLeakySlope = 0.2;

template <class T>
struct GeneratorTrace {
  BasicTensor<T> input, a1, a2, a3, u3, cat2, a4, u4, cat1, a5, output;
};

template <class T>
GeneratorTrace<T> generator_forward(const Generator<T>& g, const BasicTensor<T>& input) {
  if (input.rank() != 3 || input.dim(0) != 1) {
    throw DimensionError("generator input must be [1,H,W], got " + shape_str(input.shape()));
  }
  const T slope = static_cast<T>(kLeakySlope);
  GeneratorTrace<T> t;
  t.input = input;
  t.a1 = leaky_relu(g.e1.forward(input), slope);
  t.a2 = leaky_relu(g.e2.forward(t.a1), slope);
  t.a3 = leaky_relu(g.e3.forward(t.a2), slope);
  t.u3 = upsample_nearest(t.a3, t.a2.dim(1), t.a2.dim(2));
  t.cat2 = concat_channels(t.u3, t.a2);
  t.a4 = relu(g.d2.forward(t.cat2));
  t.u4 = upsample_nearest(t.a4, t.a1.dim(1), t.a1.dim(2));
  t.cat1 = concat_channels(t.u4, t.a1);
  t.a5 = relu(g.d1.forward(t.cat1));
  t.output = g.out.forward(t.a5);
  return t;
}

template <class T>
void generator_backward(const Generator<T>& g, const GeneratorTrace<T>& t, BasicTensor<T> grad_out,
                        Generator<T>& grads) {
  const T slope = static_cast<T>(kLeakySlope);
  BasicTensor<T> ga5 = g.out.backward(t.a5, grad_out, grads.out);
  relu_backward(t.a5, ga5);
  auto [gu4, ga1_skip] = split_channels(g.d1.backward(t.cat1, ga5, grads.d1), t.u4.dim(0));
  BasicTensor<T> ga4 = upsample_nearest_backward(t.a4.shape(), gu4);
  relu_backward(t.a4, ga4);
  auto [gu3, ga2_skip] = split_channels(g.d2.backward(t.cat2, ga4, grads.d2), t.u3.dim(0));
  BasicTensor<T> ga3 = upsample_nearest_backward(t.a3.shape(), gu3);
  leaky_relu_backward(t.a3, slope, ga3);
  BasicTensor<T> ga2 = g.e3.backward(t.a2, ga3, grads.e3);
  ga2 += ga2_skip;
  leaky_relu_backward(t.a2, slope, ga2);
  BasicTensor<T> ga1 = g.e2.backward(t.a1, ga2, grads.e2);
  ga1 += ga1_skip;
  leaky_relu_backward(t.a1, slope, ga1);
  g.e1.backward(t.input, ga1, grads.e1, false);
}

template <class T>
struct DiscriminatorTrace {
  BasicTensor<T> input, a1, a2, prob;
};

// Patch probabilities for the pair (a, b).
template <class T>
DiscriminatorTrace<T> discriminator_forward(const Discriminator<T>& d, const BasicTensor<T>& a,
                                            const BasicTensor<T>& b) {
  const T slope = static_cast<T>(kLeakySlope);
  DiscriminatorTrace<T> t;
  t.input = concat_channels(a, b);
  t.a1 = leaky_relu(d.c1.forward(t.input), slope);
  t.a2 = leaky_relu(d.c2.forward(t.a1), slope);
  t.prob = d.c3.forward(t.a2);
  for (auto& v : t.prob.data()) v = static_cast<T>(sigmoid(static_cast<double>(v)));
  return t;
}

// grad_prob is d(loss)/d(prob); returns d(loss)/d(b) when want_b is set.
template <class T>
BasicTensor<T> discriminator_backward(const Discriminator<T>& d, const DiscriminatorTrace<T>& t,
                                      const BasicTensor<T>& grad_prob, Discriminator<T>& grads,
                                      bool want_b) {
  const T slope = static_cast<T>(kLeakySlope);
  BasicTensor<T> gz(t.prob.shape());
  for (std::size_t i = 0; i < gz.size(); ++i) {
    const double p = static_cast<double>(t.prob[i]);
    gz[i] = static_cast<T>(static_cast<double>(grad_prob[i]) * p * (1.0 - p));
  }
  BasicTensor<T> ga2 = d.c3.backward(t.a2, gz, grads.c3);
  leaky_relu_backward(t.a2, slope, ga2);
  BasicTensor<T> ga1 = d.c2.backward(t.a1, ga2, grads.c2);
  leaky_relu_backward(t.a1, slope, ga1);
  BasicTensor<T> gin = d.c1.backward(t.input, ga1, grads.c1, want_b);
  if (!want_b) return {};
  return split_channels(gin, t.input.dim(0) / 2).second;
}

// Gradient of mean(-log clamp(p)) (sign = -1) or mean(-log(1 - clamp(p)))
// (sign = +1) w.r.t. p; zero where the clamp is active.
template <class T>
BasicTensor<T> bce_grad(const BasicTensor<T>& prob, int sign, double scale) {
  BasicTensor<T> g(prob.shape());
  const double inv = scale / static_cast<double>(std::max<std::size_t>(prob.size(), 1));
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = static_cast<double>(prob[i]);
    if (p <= kGanEps || p >= 1.0 - kGanEps) continue;
    g[i] = static_cast<T>(sign < 0 ? -inv / p : inv / (1.0 - p));
  }
  return g;
}

struct TranslatorConfig {
  TranslatorArch arch{};
  double lambda = 100.0;
  double adversarial_weight = 1.0;  // 0: pure L1 regression, D is never updated
  AdamConfig g_adam{2e-4, 0.9, 0.999, 1e-8, true};
  AdamConfig d_adam{2e-4, 0.9, 0.999, 1e-8, true};
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  double init_mean = 0.0;
  double init_stddev = 0.02;
};

struct PairedSlices {
  Tensor a;  // [1,H,W] source modality
  Tensor b;  // [1,H,W] target modality
};

struct TranslatorCurveRow {
  std::size_t step = 0;
  double generator = 0.0;
  double discriminator = 0.0;
  double l1 = 0.0;
};

struct TranslatorCurves {
  std::vector<TranslatorCurveRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "step,generator,discriminator,l1\n";
    for (const auto& r : rows) os << r.step << ',' << r.generator << ',' << r.discriminator << ',' << r.l1 << '\n';
    return os.str();
  }
};

template <class T>
struct TranslatorState {
  AdamState<T> g, d;
};

inline void validate_pairs(std::span<const PairedSlices> pairs) {
  if (pairs.empty()) throw DataError("translator training needs at least one slice pair");
  for (const auto& p : pairs) {
    if (p.a.rank() != 3 || p.a.dim(0) != 1 || p.a.shape() != p.b.shape()) {
      throw DimensionError("paired slices must both be [1,H,W]; got " + shape_str(p.a.shape()) + " and " +
                           shape_str(p.b.shape()));
    }
  }
}

// One alternating update on a mini-batch: a D-step on the current G, then a
// G-step against the updated D. Each step touches only its own half.
template <class T>
TranslatorCurveRow translator_step(BasicTranslatorParams<T>& params, std::span<const PairedSlices> batch,
                                   TranslatorState<T>& state, const TranslatorConfig& cfg) {
  const double w = 1.0 / static_cast<double>(batch.size());
  const bool adversarial = cfg.adversarial_weight != 0.0;
  TranslatorCurveRow row;

  std::vector<GeneratorTrace<T>> gtr;
  gtr.reserve(batch.size());
  for (const auto& p : batch) gtr.push_back(generator_forward(params.generator, BasicTensor<T>::cast(p.a)));

  if (adversarial) {
    Discriminator<T> dg = Discriminator<T>::make(params.arch);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto a = BasicTensor<T>::cast(batch[k].a), b = BasicTensor<T>::cast(batch[k].b);
      const auto real = discriminator_forward(params.discriminator, a, b);
      const auto fake = discriminator_forward(params.discriminator, a, gtr[k].output);
      row.discriminator += w * cgan_losses(gtr[k].output, b, real.prob, fake.prob, 0.0, 0.0).discriminator;
      discriminator_backward(params.discriminator, real, bce_grad(real.prob, -1, w), dg, false);
      discriminator_backward(params.discriminator, fake, bce_grad(fake.prob, +1, w), dg, false);
    }
    adam_step_net(params.discriminator, std::as_const(dg), state.d, cfg.d_adam);
  }

  Generator<T> gg = Generator<T>::make(params.arch);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto a = BasicTensor<T>::cast(batch[k].a), b = BasicTensor<T>::cast(batch[k].b);
    const auto& out = gtr[k].output;
    BasicTensor<T> g_out(out.shape());
    const double l1_scale = w * cfg.lambda / static_cast<double>(out.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = static_cast<double>(out[i]) - static_cast<double>(b[i]);
      l1 += std::abs(d);
      g_out[i] = static_cast<T>(d > 0 ? l1_scale : d < 0 ? -l1_scale : 0.0);
    }
    l1 /= static_cast<double>(out.size());
    double adv = 0.0;
    if (adversarial) {
      Discriminator<T> scratch = Discriminator<T>::make(params.arch);
      const auto fake = discriminator_forward(params.discriminator, a, out);
      adv = cgan_losses(out, b, fake.prob, fake.prob, 0.0, 1.0).adversarial;
      g_out += discriminator_backward(params.discriminator, fake,
                                      bce_grad(fake.prob, -1, w * cfg.adversarial_weight), scratch, true);
    }
    row.l1 += w * l1;
    row.generator += w * (cfg.adversarial_weight * adv + cfg.lambda * l1);
    generator_backward(params.generator, gtr[k], std::move(g_out), gg);
  }
  if (!std::isfinite(row.generator) || !std::isfinite(row.discriminator)) {
    std::ostringstream os;
    os << "translator loss became non-finite at step " << state.g.step + 1 << ": generator "
       << row.generator << ", discriminator " << row.discriminator;
    throw NumericError(os.str());
  }
  adam_step_net(params.generator, std::as_const(gg), state.g, cfg.g_adam);
  ++params.trained_steps;
  return row;
}

// Trains for cfg.epochs passes over `pairs` in seeded random mini-batches;
// epoch e shuffles with rng.substream(e). One curve row per step.
template <class T = float>
std::pair<BasicTranslatorParams<T>, TranslatorCurves> train_translator(std::span<const PairedSlices> pairs,
                                                                       const TranslatorConfig& cfg, Rng rng) {
  validate_pairs(pairs);
  auto params = init_translator<T>(cfg.arch, rng.substream(0), cfg.lambda, cfg.init_mean, cfg.init_stddev);
  TranslatorCurves curves;
  TranslatorState<T> state;
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
  std::vector<std::size_t> order(pairs.size());
  std::vector<PairedSlices> batch;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng er = rng.substream(e);
    er.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(pairs[order[k]]);
      auto row = translator_step(params, std::span<const PairedSlices>(batch), state, cfg);
      row.step = params.trained_steps;
      curves.rows.push_back(row);
    }
  }
  if (params.trained_steps == 0) params.trained_steps = 1;
  return {std::move(params), std::move(curves)};
}

// Generator output for one [1,H,W] slice, clamped to [0,1].
template <class T>
Tensor translate_slice(const BasicTranslatorParams<T>& params, const Tensor& a) {
  const auto t = generator_forward(params.generator, BasicTensor<T>::cast(a));
  Tensor out(t.output.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(t.output[i]);
    out[i] = static_cast<float>(std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0);
  }
  return out;
}

template <class T>
double heldout_l1(const BasicTranslatorParams<T>& params, std::span<const PairedSlices> pairs) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    const Tensor out = translate_slice(params, p.a);
    for (std::size_t i = 0; i < out.size(); ++i) s += std::abs(static_cast<double>(out[i]) - p.b[i]);
    n += out.size();
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

// All axial slice pairs (source, target) of a volume.
inline std::vector<PairedSlices> slice_pairs(const MultimodalVolume& v, std::size_t source, std::size_t target) {
  if (source >= v.modalities() || target >= v.modalities()) {
    throw DataError("modality index out of range: volume has " + std::to_string(v.modalities()));
  }
  const Dims& d = v.dims();
  std::vector<PairedSlices> out;
  for (std::size_t z = 0; z < d.depth; ++z) {
    PairedSlices p{Tensor({1, d.height, d.width}), Tensor({1, d.height, d.width})};
    const auto sa = v.slice(source, z), sb = v.slice(target, z);
    std::copy(sa.begin(), sa.end(), p.a.data().begin());
    std::copy(sb.begin(), sb.end(), p.b.data().begin());
    out.push_back(std::move(p));
  }
  return out;
}

// Replaces modality `target` with G(source) slice by slice and marks it
// synthetic.
template <class T>
MultimodalVolume synthesize(const BasicTranslatorParams<T>& params, const MultimodalVolume& volume,
                            std::size_t source, std::size_t target) {
  if (params.trained_steps == 0) throw ConfigError("synthesize: translator has not been trained");
  if (source >= volume.modalities() || target >= volume.modalities()) {
    throw DataError("synthesize: modality index out of range (volume has " +
                    std::to_string(volume.modalities()) + ")");
  }
  MultimodalVolume out = volume;
  const Dims& d = volume.dims();
  Tensor a({1, d.height, d.width});
  for (std::size_t z = 0; z < d.depth; ++z) {
    const auto src = volume.slice(source, z);
    std::copy(src.begin(), src.end(), a.data().begin());
    const Tensor b = translate_slice(params, a);
    auto dst = out.slice(target, z);
    std::copy(b.data().begin(), b.data().end(), dst.begin());
  }
  out.set_synthetic(target, true);
  return out;
}

}  // namespace mmjigsaw
