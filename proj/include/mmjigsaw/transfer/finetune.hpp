#pragma once

// Downstream training: weighted cross-entropy + soft dice segmentation loss,
// dice metrics, fine-tuning, and the survival-style regression head.

#include <algorithm>
#include <chrono>
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
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/puzzle/synth.hpp"
#include "mmjigsaw/puzzle/volume.hpp"
#include "mmjigsaw/transfer/segmodel.hpp"

namespace mmjigsaw {

inline constexpr double kDiceSmooth = 1e-6;

struct LabeledSlice {
  Tensor image;                     // [M, H, W]
  std::vector<std::uint8_t> mask;   // H * W labels
};

struct LabeledDataset {
  std::size_t classes = 2;
  std::vector<LabeledSlice> slices;

  std::size_t size() const { return slices.size(); }
  bool empty() const { return slices.empty(); }
};

// Axial slices of each case whose foreground fraction reaches `min_foreground`,
// modalities stacked as channels.
inline LabeledDataset labeled_slices(std::span<const SynthCase> cases, double min_foreground = 0.05,
                                     std::size_t stride = 1) {
  LabeledDataset ds;
  if (cases.empty()) return ds;
  ds.classes = cases.front().mask.classes;
  for (const auto& c : cases) {
    if (c.mask.dims != c.volume.dims()) throw DataError("mask dims differ from volume dims");
    const Dims& d = c.volume.dims();
    for (std::size_t z = 0; z < d.depth; z += std::max<std::size_t>(stride, 1)) {
      const auto lab = c.mask.slice(z);
      const auto fg = static_cast<double>(std::count_if(lab.begin(), lab.end(), [](std::uint8_t v) { return v != 0; }));
      if (fg < min_foreground * static_cast<double>(lab.size())) continue;
      ds.slices.push_back({c.volume.stacked_slice(z), std::vector<std::uint8_t>(lab.begin(), lab.end())});
    }
  }
  return ds;
}

// First ceil(fraction * n) slices of a seeded shuffle (at least one).
inline LabeledDataset subset(const LabeledDataset& ds, double fraction, Rng rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("label fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ds.size()) - 1e-9)));
  LabeledDataset out;
  out.classes = ds.classes;
  for (std::size_t i = 0; i < std::min(n, ds.size()); ++i) out.slices.push_back(ds.slices[order[i]]);
  return out;
}

// FNV-1a over images and masks, used to check that experiment arms share
// identical data.
inline std::uint64_t dataset_hash(const LabeledDataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(&ds.classes, sizeof ds.classes);
  for (const auto& s : ds.slices) {
    mix(s.image.data().data(), s.image.size() * sizeof(float));
    mix(s.mask.data(), s.mask.size());
  }
  return h;
}

// Inverse class frequency, total / (classes * count_c); absent classes get 0.
inline std::vector<double> inverse_frequency_weights(const LabeledDataset& ds) {
  std::vector<double> counts(ds.classes, 0.0);
  double total = 0.0;
  for (const auto& s : ds.slices)
    for (std::uint8_t v : s.mask) {
      if (v >= ds.classes) throw DataError("mask label " + std::to_string(v) + " >= class count");
      counts[v] += 1.0;
      total += 1.0;
    }
  std::vector<double> w(ds.classes, 0.0);
  for (std::size_t c = 0; c < ds.classes; ++c) {
    if (counts[c] > 0.0) w[c] = total / (static_cast<double>(ds.classes) * counts[c]);
  }
  return w;
}

struct SegLoss {
  double total = 0.0;
  double cross_entropy = 0.0;
  double dice = 0.0;  // mean soft dice over classes
};

// 0.5 * weighted CE + 0.5 * (1 - mean soft dice). CE is the weighted mean
// sum_i w[y_i] * -log p_i(y_i) / sum_i w[y_i]. When `grad` is non-null,
// adds scale * d(total)/d(logits) into it.
template <class T>
SegLoss seg_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> mask,
                 std::span<const double> class_weights, BasicTensor<T>* grad = nullptr, double scale = 1.0) {
  if (logits.rank() != 3) throw DimensionError("seg_loss: logits must be [C,H,W], got " + shape_str(logits.shape()));
  const std::size_t c = logits.dim(0), px = logits.dim(1) * logits.dim(2);
  if (mask.size() != px) {
    throw DimensionError("seg_loss: mask has " + std::to_string(mask.size()) + " labels for " +
                         std::to_string(px) + " pixels");
  }
  if (class_weights.size() != c) {
    throw DimensionError("seg_loss: " + std::to_string(class_weights.size()) + " class weights for " +
                         std::to_string(c) + " classes");
  }
  std::vector<double> prob(c * px);
  for (std::size_t i = 0; i < px; ++i) {
    double mx = static_cast<double>(logits[i]);
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(logits[k * px + i]));
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += prob[k * px + i] = std::exp(static_cast<double>(logits[k * px + i]) - mx);
    for (std::size_t k = 0; k < c; ++k) prob[k * px + i] /= z;
  }
  double wsum = 0.0, ce = 0.0;
  for (std::size_t i = 0; i < px; ++i) {
    if (mask[i] >= c) throw DataError("seg_loss: label " + std::to_string(mask[i]) + " >= class count");
    const double w = class_weights[mask[i]];
    wsum += w;
    ce -= w * std::log(std::max(prob[mask[i] * px + i], 1e-300));
  }
  if (wsum > 0.0) ce /= wsum;
  std::vector<double> inter(c, 0.0), psum(c, 0.0), tsum(c, 0.0);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < px; ++i) {
      const double p = prob[k * px + i];
      const double t = mask[i] == k ? 1.0 : 0.0;
      inter[k] += p * t;
      psum[k] += p;
      tsum[k] += t;
    }
  double dice = 0.0;
  for (std::size_t k = 0; k < c; ++k) dice += (2.0 * inter[k] + kDiceSmooth) / (psum[k] + tsum[k] + kDiceSmooth);
  dice /= static_cast<double>(c);
  SegLoss r{0.5 * ce + 0.5 * (1.0 - dice), ce, dice};
  if (!grad) return r;

  logits.require_same_shape(*grad, "seg_loss grad");
  std::vector<double> gp(c * px, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double s = psum[k] + tsum[k] + kDiceSmooth;
    const double num = 2.0 * inter[k] + kDiceSmooth;
    for (std::size_t i = 0; i < px; ++i) {
      const double t = mask[i] == k ? 1.0 : 0.0;
      // d(1 - mean dice)/dp
      gp[k * px + i] = -0.5 / static_cast<double>(c) * (2.0 * t * s - num) / (s * s);
    }
  }
  for (std::size_t i = 0; i < px; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < c; ++k) dot += gp[k * px + i] * prob[k * px + i];
    const double wce = wsum > 0.0 ? 0.5 * class_weights[mask[i]] / wsum : 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double p = prob[k * px + i];
      const double g_dice = p * (gp[k * px + i] - dot);
      const double g_ce = wce * (p - (mask[i] == k ? 1.0 : 0.0));
      (*grad)[k * px + i] += static_cast<T>(scale * (g_dice + g_ce));
    }
  }
  return r;
}

// 2|A ∩ B| / (|A| + |B|) for label `cls`; 1 when both are empty.
inline double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::uint8_t cls) {
  if (pred.size() != truth.size()) throw DimensionError("dice_score: mask sizes differ");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls, t = truth[i] == cls;
    a += p;
    b += t;
    both += p && t;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

// Dice per class pooled over every pixel of the dataset (index 0 is the
// background).
template <class T>
std::vector<double> evaluate_dice(const BasicSegModel<T>& model, const LabeledDataset& ds) {
  std::vector<std::uint8_t> pred, truth;
  for (const auto& s : ds.slices) {
    const auto t = seg_forward(model, BasicTensor<T>::cast(s.image));
    const auto p = predict_mask(t.logits);
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), s.mask.begin(), s.mask.end());
  }
  std::vector<double> out(ds.classes);
  for (std::size_t c = 0; c < ds.classes; ++c) out[c] = dice_score(pred, truth, static_cast<std::uint8_t>(c));
  return out;
}

// Mean over foreground classes 1..C-1.
inline double mean_foreground_dice(std::span<const double> per_class) {
  if (per_class.size() < 2) return per_class.empty() ? 0.0 : per_class[0];
  return std::accumulate(per_class.begin() + 1, per_class.end(), 0.0) / static_cast<double>(per_class.size() - 1);
}

struct FinetuneConfig {
  AdamConfig adam{1e-5, 0.9, 0.999, 1e-8, true};
  std::size_t epochs = 50;
  double l2_lambda = 0.1;
  std::size_t batch_size = 8;
  std::size_t eval_every = 1;  // held-out dice cadence in epochs (the last epoch is always evaluated)
};

struct FinetuneRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::vector<double> dice;  // per class, empty when not evaluated
  double seconds = 0.0;
};

struct FinetuneReport {
  std::vector<FinetuneRow> rows;
  std::vector<double> class_weights;

  const std::vector<double>& final_dice() const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
      if (!it->dice.empty()) return it->dice;
    static const std::vector<double> none;
    return none;
  }

  std::string to_csv(bool timing = true) const {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,loss,class,dice,seconds\n";
    for (const auto& r : rows) {
      if (r.dice.empty()) {
        os << r.epoch << ',' << r.loss << ",,," << (timing ? r.seconds : 0.0) << '\n';
      }
      for (std::size_t c = 0; c < r.dice.size(); ++c) {
        os << r.epoch << ',' << r.loss << ',' << c << ',' << r.dice[c] << ',' << (timing ? r.seconds : 0.0) << '\n';
      }
    }
    return os.str();
  }
};

// Adam fine-tuning of the whole model on `train`; epoch e shuffles with
// rng.substream(e). Held-out dice is recorded per the eval cadence.
template <class T>
FinetuneReport finetune(BasicSegModel<T>& model, const LabeledDataset& train, const LabeledDataset& heldout,
                        const FinetuneConfig& cfg, Rng rng) {
  if (train.empty()) throw DataError("finetune: empty training set");
  if (train.classes != model.classes) {
    throw DimensionError("finetune: dataset has " + std::to_string(train.classes) + " classes, model " +
                         std::to_string(model.classes));
  }
  FinetuneReport report;
  report.class_weights = inverse_frequency_weights(train);
  AdamState<T> state;
  std::vector<std::size_t> order(train.size());
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng er = rng.substream(e);
    er.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const double w = 1.0 / static_cast<double>(end - start);
      auto grads = model.zeros_like();
      double batch = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train.slices[order[k]];
        const auto tr = seg_forward(model, BasicTensor<T>::cast(s.image));
        BasicTensor<T> g(tr.logits.shape());
        batch += seg_loss(tr.logits, std::span<const std::uint8_t>(s.mask), report.class_weights, &g, w).total;
        seg_backward(model, tr, g, grads);
      }
      if (!std::isfinite(batch)) {
        throw NumericError("finetune: loss became non-finite at epoch " + std::to_string(e));
      }
      l2_penalty_backward(std::as_const(model).weight_tensors(), grads.weight_tensors(), cfg.l2_lambda);
      adam_step(model, grads, state, cfg.adam);
      total += batch;
    }
    FinetuneRow row;
    row.epoch = e;
    row.loss = total / static_cast<double>(train.size()) +
               l2_penalty(std::as_const(model).weight_tensors(), cfg.l2_lambda);
    if (!heldout.empty() && (e % std::max<std::size_t>(cfg.eval_every, 1) == 0 || e == cfg.epochs)) {
      row.dice = evaluate_dice(model, heldout);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.rows.push_back(std::move(row));
  }
  return report;
}

// Regression head: pooled encoder features -> dense(5) -> ReLU, age
// appended, -> dense(1). Inputs and targets may be standardised; the
// defaults leave them untouched.
template <class T>
struct BasicRegHead {
  DenseLayer<T> hidden;  // [5, features]
  DenseLayer<T> output;  // [1, 6]
  double age_mean = 0.0, age_scale = 1.0;
  double target_mean = 0.0, target_scale = 1.0;

  static BasicRegHead make(std::size_t features) {
    return {DenseLayer<T>::make(features, 5), DenseLayer<T>::make(6, 1)};
  }
  std::vector<BasicTensor<T>*> tensors() { return {&hidden.weight, &hidden.bias, &output.weight, &output.bias}; }
  std::vector<const BasicTensor<T>*> tensors() const {
    return {&hidden.weight, &hidden.bias, &output.weight, &output.bias};
  }
  BasicRegHead zeros_like() const { return {hidden.zeros_like(), output.zeros_like()}; }
};

using RegHead = BasicRegHead<float>;

struct RegCase {
  Tensor image;  // [M, H, W]
  double age = 0.0;
  double target = 0.0;
};

template <class T>
struct RegTrace {
  BasicTensor<T> pooled, hidden, joined;
  double prediction = 0.0;
};

template <class T>
RegTrace<T> reg_forward(const BasicRegHead<T>& head, const BasicTensor<T>& pooled, double age) {
  RegTrace<T> t;
  t.pooled = pooled;
  t.hidden = relu(head.hidden.forward(pooled));
  t.joined = BasicTensor<T>({6});
  std::copy(t.hidden.data().begin(), t.hidden.data().end(), t.joined.data().begin());
  t.joined[5] = static_cast<T>((age - head.age_mean) / head.age_scale);
  t.prediction = static_cast<double>(head.output.forward(t.joined)[0]) * head.target_scale + head.target_mean;
  return t;
}

struct RegConfig {
  AdamConfig adam{1e-5, 0.9, 0.999, 1e-8, true};
  std::size_t epochs = 50;
  double l2_lambda = 0.1;
  std::size_t batch_size = 8;
  bool freeze_encoder = true;
  bool standardize = true;  // z-score age and target on the training split
  InitConfig init{};
};

struct RegResult {
  double mse = 0.0;  // held-out
  std::vector<double> train_loss;
  std::vector<double> predictions;
};

template <class T>
double regression_mse(const EncoderLayers<T>& encoder, bool normalize, const BasicRegHead<T>& head,
                      std::span<const RegCase> cases, std::vector<double>* predictions = nullptr) {
  double s = 0.0;
  for (const auto& c : cases) {
    const auto enc = encoder_forward(encoder, BasicTensor<T>::cast(c.image), normalize);
    const double p = reg_forward(head, global_avg_pool(enc.acts.back()), c.age).prediction;
    if (predictions) predictions->push_back(p);
    s += (p - c.target) * (p - c.target);
  }
  return cases.empty() ? 0.0 : s / static_cast<double>(cases.size());
}

// Trains a RegHead (and the encoder unless frozen) on `train` by MSE and
// reports the held-out MSE.
template <class T>
RegResult regress_survival(EncoderLayers<T> encoder, bool normalize, std::span<const RegCase> train,
                           std::span<const RegCase> test, const RegConfig& cfg, Rng rng) {
  if (train.size() < 2) throw DataError("regress_survival: need at least two training cases");
  const std::size_t features = encoder.back().out_channels();
  auto head = BasicRegHead<T>::make(features);
  {
    Rng r = rng.substream(0);
    head.hidden.init_normal(r, cfg.init.mean, cfg.init.stddev);
    Rng r2 = rng.substream(1);
    head.output.init_normal(r2, cfg.init.mean, cfg.init.stddev);
  }
  if (cfg.standardize) {
    auto moments = [&](auto get, double& mean, double& scale) {
      double m = 0.0, v = 0.0;
      for (const auto& c : train) m += get(c);
      m /= static_cast<double>(train.size());
      for (const auto& c : train) v += (get(c) - m) * (get(c) - m);
      v /= static_cast<double>(train.size());
      mean = m;
      scale = v > 0.0 ? std::sqrt(v) : 1.0;
    };
    moments([](const RegCase& c) { return c.age; }, head.age_mean, head.age_scale);
    moments([](const RegCase& c) { return c.target; }, head.target_mean, head.target_scale);
  }

  // Frozen encoder: features are computed once.
  std::vector<BasicTensor<T>> frozen;
  if (cfg.freeze_encoder) {
    for (const auto& c : train) {
      frozen.push_back(global_avg_pool(encoder_forward(encoder, BasicTensor<T>::cast(c.image), normalize).acts.back()));
    }
  }
  RegResult result;
  AdamState<T> head_state, enc_state;
  std::vector<std::size_t> order(train.size());
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng er = rng.substream(100 + e);
    er.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const double w = 1.0 / static_cast<double>(end - start);
      auto hg = head.zeros_like();
      EncoderLayers<T> eg = encoder;
      for (auto& l : eg) l = l.zeros_like();
      for (std::size_t k = start; k < end; ++k) {
        const RegCase& c = train[order[k]];
        EncoderTrace<T> enc;
        BasicTensor<T> pooled;
        if (cfg.freeze_encoder) {
          pooled = frozen[order[k]];
        } else {
          enc = encoder_forward(encoder, BasicTensor<T>::cast(c.image), normalize);
          pooled = global_avg_pool(enc.acts.back());
        }
        const auto tr = reg_forward(head, pooled, c.age);
        const double zt = (c.target - head.target_mean) / head.target_scale;
        const double zp = (tr.prediction - head.target_mean) / head.target_scale;
        total += (zp - zt) * (zp - zt);
        BasicTensor<T> g_out({1});
        g_out[0] = static_cast<T>(w * 2.0 * (zp - zt));
        BasicTensor<T> g_joined = head.output.backward(tr.joined, g_out, hg.output);
        BasicTensor<T> g_hidden({5});
        std::copy_n(g_joined.data().begin(), 5, g_hidden.data().begin());
        relu_backward(tr.hidden, g_hidden);
        BasicTensor<T> g_pooled = head.hidden.backward(pooled, g_hidden, hg.hidden);
        if (!cfg.freeze_encoder) {
          std::array<BasicTensor<T>, kEncoderDepth> level{};
          level.back() = global_avg_pool_backward(enc.acts.back().shape(), g_pooled);
          encoder_backward(encoder, enc, std::move(level), eg);
        }
      }
      if (!std::isfinite(total)) throw NumericError("regress_survival: loss became non-finite at epoch " + std::to_string(e));
      std::vector<const BasicTensor<T>*> hw{&head.hidden.weight, &head.output.weight};
      l2_penalty_backward(hw, {&hg.hidden.weight, &hg.output.weight}, cfg.l2_lambda);
      adam_step(head, std::as_const(hg), head_state, cfg.adam);
      if (!cfg.freeze_encoder) {
        std::vector<BasicTensor<T>*> ps;
        std::vector<const BasicTensor<T>*> cgs;
        for (std::size_t i = 0; i < kEncoderDepth; ++i) {
          ps.push_back(&encoder[i].weight);
          ps.push_back(&encoder[i].bias);
          cgs.push_back(&eg[i].weight);
          cgs.push_back(&eg[i].bias);
        }
        adam_step<T>(std::span<BasicTensor<T>* const>(ps), std::span<const BasicTensor<T>* const>(cgs), enc_state,
                     cfg.adam);
      }
    }
    result.train_loss.push_back(total / static_cast<double>(train.size()));
  }
  result.mse = regression_mse(encoder, normalize, head, test, &result.predictions);
  return result;
}

}  // namespace mmjigsaw
