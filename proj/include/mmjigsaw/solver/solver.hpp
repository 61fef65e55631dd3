#pragma once

// Puzzle-solver network G and its training loop.
//
// Each patch is encoded independently to an N-vector of position scores;
// stacking them gives the N x N score matrix X (row i = patch i). Sinkhorn
// turns X into a soft permutation S and the reconstruction is P_rec = S^T P.
// Training minimises the per-pixel MSE between P_rec and the ordered stack
// plus an L2 penalty on the weights.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
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
#include "mmjigsaw/permute/assignment.hpp"
#include "mmjigsaw/permute/sinkhorn.hpp"
#include "mmjigsaw/puzzle/puzzle.hpp"
#include "mmjigsaw/solver/encoder.hpp"

namespace mmjigsaw {

template <class T>
struct BasicSolverParams {
  EncoderArch arch;
  std::size_t outputs = 0;  // N
  EncoderLayers<T> encoder;
  DenseLayer<T> head;

  static BasicSolverParams make(const EncoderArch& arch, std::size_t outputs) {
    if (outputs == 0) throw ConfigError("solver output width must be positive");
    BasicSolverParams p;
    p.arch = arch;
    p.outputs = outputs;
    p.encoder = make_encoder<T>(arch, arch.in_channels);
    p.head = DenseLayer<T>::make(arch.channels.back(), outputs);
    return p;
  }

  // Declaration order: conv1.weight, conv1.bias, ..., conv5.bias, dense.weight, dense.bias.
  std::vector<BasicTensor<T>*> tensors() {
    std::vector<BasicTensor<T>*> out;
    for (auto& l : encoder) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
  }
  std::vector<const BasicTensor<T>*> tensors() const {
    std::vector<const BasicTensor<T>*> out;
    for (const auto& t : const_cast<BasicSolverParams*>(this)->tensors()) out.push_back(t);
    return out;
  }
  std::vector<const BasicTensor<T>*> weight_tensors() const {
    std::vector<const BasicTensor<T>*> out;
    for (const auto& l : encoder) out.push_back(&l.weight);
    out.push_back(&head.weight);
    return out;
  }
  std::vector<BasicTensor<T>*> weight_tensors() {
    std::vector<BasicTensor<T>*> out;
    for (auto& l : encoder) out.push_back(&l.weight);
    out.push_back(&head.weight);
    return out;
  }

  BasicSolverParams zeros_like() const {
    BasicSolverParams g = *this;
    for (auto* t : g.tensors()) t->fill(T{0});
    return g;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  friend bool operator==(const BasicSolverParams& a, const BasicSolverParams& b) {
    if (!(a.arch == b.arch) || a.outputs != b.outputs) return false;
    const auto ta = a.tensors(), tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }
};

using SolverParams = BasicSolverParams<float>;

struct InitConfig {
  double mean = 0.1;
  double stddev = 0.001;
};

template <class T = float>
BasicSolverParams<T> init_params(const EncoderArch& arch, std::size_t outputs, Rng rng,
                                 const InitConfig& init = {}) {
  auto p = BasicSolverParams<T>::make(arch, outputs);
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    Rng r = rng.substream(i);
    p.encoder[i].init_normal(r, init.mean, init.stddev);
  }
  Rng r = rng.substream(kEncoderDepth);
  p.head.init_normal(r, init.mean, init.stddev);
  return p;
}

struct SolverConfig {
  int sinkhorn_iters = 20;
  int eval_iters = 50;
  double temperature = 1.0;
  AdamConfig adam{};
  double l2_lambda = 0.1;
  std::size_t batch_size = 32;
};

// Resize a single patch [l, l] to the encoder input [1, side, side].
template <class T>
BasicTensor<T> encoder_input(const BasicTensor<T>& patches, std::size_t i, std::size_t side) {
  const std::size_t l = patches.dim(1);
  BasicTensor<T> p({1, l, l});
  std::copy_n(patches.data().begin() + static_cast<long>(i * l * l), l * l, p.data().begin());
  return resize_bilinear(p, side, side);
}

template <class T>
struct PatchTrace {
  EncoderTrace<T> enc;
  BasicTensor<T> pooled;
};

template <class T>
SquareScoreMatrix encode_scores(const BasicSolverParams<T>& params, const BasicTensor<T>& patches,
                                std::vector<PatchTrace<T>>* traces = nullptr) {
  const std::size_t n = patches.dim(0);
  if (n != params.outputs) {
    throw DimensionError("puzzle has " + std::to_string(n) + " patches but the solver emits " +
                         std::to_string(params.outputs) + " scores per patch");
  }
  SquareScoreMatrix x(n);
  if (traces) traces->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto enc = encoder_forward(params.encoder, encoder_input(patches, i, params.arch.input_side),
                               params.arch.normalize);
    BasicTensor<T> pooled = global_avg_pool(enc.acts.back());
    const BasicTensor<T> row = params.head.forward(pooled);
    for (std::size_t j = 0; j < n; ++j) x(i, j) = static_cast<double>(row[j]);
    if (traces) (*traces)[i] = {std::move(enc), std::move(pooled)};
  }
  return x;
}

template <class T>
struct SolverOutput {
  SquareScoreMatrix scores;
  DoublyStochasticMatrix soft;
  BasicTensor<T> recon;
};

// Mean squared error per pixel.
template <class T>
double puzzle_loss(const BasicTensor<T>& recon, const BasicTensor<T>& truth_stack) {
  recon.require_same_shape(truth_stack, "puzzle_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = static_cast<double>(recon[i]) - static_cast<double>(truth_stack[i]);
    s += d * d;
  }
  return recon.empty() ? 0.0 : s / static_cast<double>(recon.size());
}

template <class T>
SolverOutput<T> solve_from_scores(const SquareScoreMatrix& scores, const BasicTensor<T>& patches,
                                  int iters, double temperature) {
  auto s = sinkhorn(scores, iters, temperature);
  auto recon = apply_soft(s, patches);
  return {scores, std::move(s), std::move(recon)};
}

template <class T>
SolverOutput<T> forward(const BasicSolverParams<T>& params, const BasicTensor<T>& patches, int iters,
                        double temperature) {
  return solve_from_scores(encode_scores(params, patches), patches, iters, temperature);
}

inline SolverOutput<float> forward(const SolverParams& params, const Puzzle& puzzle, int iters,
                                   double temperature) {
  return forward<float>(params, puzzle.patches, iters, temperature);
}

// Data loss of one puzzle; when `grads` is non-null, adds `weight` times the
// loss gradient into it.
template <class T>
double puzzle_loss_and_grad(const BasicSolverParams<T>& params, const BasicTensor<T>& patches,
                            const BasicTensor<T>& ordered, int iters, double temperature,
                            BasicSolverParams<T>* grads, double weight = 1.0) {
  std::vector<PatchTrace<T>> traces;
  const SquareScoreMatrix x = encode_scores(params, patches, grads ? &traces : nullptr);
  SinkhornTrace st;
  const auto s = sinkhorn(x, iters, temperature, grads ? &st : nullptr);
  const auto recon = apply_soft(s, patches);
  const double loss = puzzle_loss(recon, ordered);
  if (!grads) return loss;

  const std::size_t n = patches.dim(0);
  BasicTensor<double> g_recon(recon.shape());
  const double k = weight * 2.0 / static_cast<double>(recon.size());
  for (std::size_t i = 0; i < recon.size(); ++i) {
    g_recon[i] = k * (static_cast<double>(recon[i]) - static_cast<double>(ordered[i]));
  }
  const SquareMatrix g_s = apply_soft_backward(patches, g_recon);
  const SquareMatrix g_x = sinkhorn_backward(st, g_s);
  for (std::size_t i = 0; i < n; ++i) {
    BasicTensor<T> g_row({n});
    for (std::size_t j = 0; j < n; ++j) g_row[j] = static_cast<T>(g_x(i, j));
    const BasicTensor<T> g_pooled = params.head.backward(traces[i].pooled, g_row, grads->head);
    std::array<BasicTensor<T>, kEncoderDepth> level{};
    level.back() = global_avg_pool_backward(traces[i].enc.acts.back().shape(), g_pooled);
    encoder_backward(params.encoder, traces[i].enc, std::move(level), grads->encoder);
  }
  return loss;
}

struct TrainReportRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<TrainReportRow> rows;

  // With `timing` off the seconds column is written as 0 so the file is a
  // pure function of the inputs.
  std::string to_csv(bool timing = true) const {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,loss,accuracy,seconds\n";
    for (const auto& r : rows) {
      os << r.epoch << ',' << r.loss << ',' << r.accuracy << ',' << (timing ? r.seconds : 0.0) << '\n';
    }
    return os.str();
  }
};

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Placement accuracy: fraction of patches whose hard-decoded position equals
// the truth, averaged over puzzles.
template <class T>
EvalResult evaluate(const BasicSolverParams<T>& params, std::span<const Puzzle> puzzles,
                    const SolverConfig& cfg) {
  EvalResult r;
  if (puzzles.empty()) return r;
  for (const auto& pz : puzzles) {
    const BasicTensor<T> patches = BasicTensor<T>::cast(pz.patches);
    const auto out = forward(params, patches, cfg.eval_iters, cfg.temperature);
    const Permutation decoded = hard_decode(out.soft);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pz.n(); ++i) hits += decoded[i] == pz.truth[i] ? 1 : 0;
    r.accuracy += static_cast<double>(hits) / static_cast<double>(pz.n());
    r.loss += puzzle_loss(out.recon, BasicTensor<T>::cast(pz.ordered));
  }
  r.accuracy /= static_cast<double>(puzzles.size());
  r.loss /= static_cast<double>(puzzles.size());
  return r;
}

// One pass over `train` in a seeded random order. Each mini-batch minimises
// mean(puzzle loss) + L2. Accuracy is measured on `heldout` when non-empty.
template <class T>
TrainReportRow train_epoch(BasicSolverParams<T>& params, std::span<const Puzzle> train,
                           AdamState<T>& state, const SolverConfig& cfg, Rng rng, std::size_t epoch,
                           std::span<const Puzzle> heldout = {}) {
  if (train.empty()) throw DataError("train_epoch: empty puzzle dataset");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));

  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
  double total = 0.0;
  std::vector<double> batch_losses;
  for (std::size_t start = 0, batch = 0; start < order.size(); start += bs, ++batch) {
    const std::size_t end = std::min(order.size(), start + bs);
    const double w = 1.0 / static_cast<double>(end - start);
    auto grads = params.zeros_like();
    double batch_loss = 0.0;
    for (std::size_t k = start; k < end; ++k) {
      const Puzzle& pz = train[order[k]];
      batch_loss += puzzle_loss_and_grad(params, BasicTensor<T>::cast(pz.patches),
                                         BasicTensor<T>::cast(pz.ordered), cfg.sinkhorn_iters,
                                         cfg.temperature, &grads, w);
    }
    const double reg = l2_penalty(std::as_const(params).weight_tensors(), cfg.l2_lambda);
    batch_losses.push_back(batch_loss * w + reg);
    if (!std::isfinite(batch_loss) || !std::isfinite(reg)) {
      std::ostringstream os;
      os << "puzzle loss became non-finite at epoch " << epoch << ", batch " << batch << "; loss trace:";
      for (double l : batch_losses) os << ' ' << l;
      throw TrainingDiverged(os.str());
    }
    l2_penalty_backward(std::as_const(params).weight_tensors(), grads.weight_tensors(), cfg.l2_lambda);
    adam_step(params, grads, state, cfg.adam);
    total += batch_loss;
  }
  TrainReportRow row;
  row.epoch = epoch;
  row.loss = total / static_cast<double>(train.size());
  if (!heldout.empty()) row.accuracy = evaluate(params, heldout, cfg).accuracy;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

struct SolverTrainOptions {
  std::size_t epochs = 500;
  double stop_accuracy = 2.0;    // stop once held-out accuracy reaches this
  std::size_t eval_every = 1;    // held-out evaluation cadence in epochs
};

// Runs train_epoch for up to `opt.epochs` epochs; epoch e shuffles with
// rng.substream(e).
template <class T>
TrainReport train_solver(BasicSolverParams<T>& params, std::span<const Puzzle> train,
                         std::span<const Puzzle> heldout, const SolverConfig& cfg,
                         const SolverTrainOptions& opt, Rng rng) {
  TrainReport report;
  report.seed = rng.seed();
  AdamState<T> state;
  for (std::size_t e = 1; e <= opt.epochs; ++e) {
    const bool eval_now = !heldout.empty() && (e % std::max<std::size_t>(opt.eval_every, 1) == 0 || e == opt.epochs);
    report.rows.push_back(train_epoch(params, train, state, cfg, rng.substream(e), e,
                                      eval_now ? heldout : std::span<const Puzzle>{}));
    if (eval_now && report.rows.back().accuracy >= opt.stop_accuracy) break;
  }
  return report;
}

}  // namespace mmjigsaw
