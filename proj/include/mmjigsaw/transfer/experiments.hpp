#pragma once

// Experiment drivers: puzzle pretraining on a volume set, low-shot
// fine-tuning, puzzle-complexity ablation and the multimodal vs
// single-modal comparison. All emit rows of one metric table.

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

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/puzzle/puzzle.hpp"
#include "mmjigsaw/puzzle/synth.hpp"
#include "mmjigsaw/solver/solver.hpp"
#include "mmjigsaw/transfer/finetune.hpp"
#include "mmjigsaw/transfer/segmodel.hpp"

namespace mmjigsaw {

struct MetricRow {
  std::string experiment;
  std::string arm;
  double fraction_or_grid = 0.0;
  std::uint64_t seed = 0;
  std::string cls;  // class index, "mean", or "mse"
  double value = 0.0;
};

inline std::string metrics_csv(std::span<const MetricRow> rows) {
  std::ostringstream os;
  os.precision(9);
  os << "experiment,arm,fraction_or_grid,seed,class,dice_or_mse\n";
  for (const auto& r : rows) {
    os << r.experiment << ',' << r.arm << ',' << r.fraction_or_grid << ',' << r.seed << ',' << r.cls << ','
       << r.value << '\n';
  }
  return os.str();
}

// Per-class dice rows plus a "mean" row over the foreground classes.
inline void push_dice_rows(std::vector<MetricRow>& out, const std::string& experiment, const std::string& arm,
                           double key, std::uint64_t seed, const std::vector<double>& dice) {
  for (std::size_t c = 0; c < dice.size(); ++c) out.push_back({experiment, arm, key, seed, std::to_string(c), dice[c]});
  out.push_back({experiment, arm, key, seed, "mean", mean_foreground_dice(dice)});
}

struct PretrainConfig {
  PuzzleSpec puzzle{};
  EncoderArch arch{};
  SolverConfig solver{};
  SolverTrainOptions train{};
  InitConfig init{};
  std::size_t max_puzzles = 500;  // 0: no cap
  double heldout_fraction = 0.0;  // of volumes, for the accuracy column
};

// Puzzles from every volume, interleaved round-robin across volumes so a cap
// keeps the set diverse. Volume i draws from rng.substream(i).
inline std::vector<Puzzle> build_puzzles(std::span<const MultimodalVolume> volumes, const PuzzleSpec& spec, Rng rng,
                                         std::size_t max_puzzles = 0) {
  std::vector<std::vector<Puzzle>> per;
  for (std::size_t i = 0; i < volumes.size(); ++i) per.push_back(create_puzzles(volumes[i], spec, rng.substream(i)));
  std::vector<Puzzle> out;
  for (std::size_t k = 0;; ++k) {
    bool any = false;
    for (auto& v : per) {
      if (k >= v.size()) continue;
      any = true;
      if (max_puzzles != 0 && out.size() >= max_puzzles) return out;
      out.push_back(std::move(v[k]));
    }
    if (!any) break;
  }
  return out;
}

// Keeps only the listed modalities (the synthetic flags follow).
inline MultimodalVolume select_modalities(const MultimodalVolume& v, std::span<const std::size_t> keep) {
  MultimodalVolume out(keep.size(), v.dims());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto src = v.modality(keep[k]);
    std::copy(src.begin(), src.end(), out.modality(k).begin());
    out.set_synthetic(k, v.is_synthetic(keep[k]));
  }
  return out;
}

struct PretrainResult {
  SolverParams params;
  TrainReport report;
  std::size_t train_puzzles = 0;
  std::size_t heldout_puzzles = 0;
};

// Puzzles from the first volumes train the solver; the trailing
// heldout_fraction of volumes supplies the accuracy column.
inline PretrainResult pretrain_solver(std::span<const MultimodalVolume> volumes, const PretrainConfig& cfg, Rng rng) {
  if (volumes.empty()) throw DataError("pretrain: no volumes");
  const auto n_held = static_cast<std::size_t>(std::floor(cfg.heldout_fraction * static_cast<double>(volumes.size())));
  const std::size_t n_train = volumes.size() - n_held;
  if (n_train == 0) throw DataError("pretrain: held-out fraction leaves no training volumes");
  const auto train = build_puzzles(volumes.subspan(0, n_train), cfg.puzzle, rng.substream(1), cfg.max_puzzles);
  const auto held = build_puzzles(volumes.subspan(n_train), cfg.puzzle, rng.substream(2));
  if (train.empty()) throw DataError("pretrain: no puzzles could be built (all slices below the foreground threshold?)");
  PretrainResult r;
  r.params = init_params(cfg.arch, cfg.puzzle.patches(), rng.substream(3), cfg.init);
  r.report = train_solver(r.params, std::span<const Puzzle>(train), std::span<const Puzzle>(held), cfg.solver,
                          cfg.train, rng.substream(4));
  r.report.seed = rng.seed();
  r.train_puzzles = train.size();
  r.heldout_puzzles = held.size();
  return r;
}

struct DownstreamData {
  LabeledDataset train;
  LabeledDataset test;
};

struct DownstreamConfig {
  FinetuneConfig finetune{};
  InitConfig init{};  // decoder and from-scratch encoder
  AdaptMode adapt = AdaptMode::copy;
};

// Fine-tunes a model whose encoder comes from `solver` (or a fresh init when
// null) and returns the final held-out dice. The decoder init depends only on
// `seed`, so arms with the same seed share it.
inline std::vector<double> downstream_dice(const SolverParams* solver, const EncoderArch& arch,
                                           const LabeledDataset& train, const LabeledDataset& test,
                                           const DownstreamConfig& cfg, Rng rng) {
  if (train.empty()) throw DataError("downstream: empty training split");
  const std::size_t channels = train.slices.front().image.dim(0);
  SegModel model = init_seg_model(arch, channels, train.classes, rng.substream(0), cfg.init);
  if (solver) model = transplant(*solver, std::move(model), cfg.adapt);
  FinetuneConfig ft = cfg.finetune;
  ft.eval_every = std::max<std::size_t>(ft.epochs, 1);  // only the final dice is reported
  const auto report = finetune(model, train, test, ft, rng.substream(1));
  return report.final_dice();
}

// For each fraction and seed, both arms fine-tune on the same labelled subset
// drawn with rng.substream(seed).substream(fraction index).
inline std::vector<MetricRow> lowshot_sweep(const SolverParams& pretrained, const EncoderArch& arch,
                                            const DownstreamData& data, std::span<const double> fractions,
                                            std::span<const std::uint64_t> seeds, const DownstreamConfig& cfg,
                                            std::vector<std::uint64_t>* hashes = nullptr) {
  std::vector<MetricRow> rows;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    for (std::uint64_t seed : seeds) {
      Rng base(seed);
      const LabeledDataset sub = subset(data.train, fractions[fi], base.substream(fi));
      if (hashes) hashes->push_back(dataset_hash(sub));
      push_dice_rows(rows, "lowshot", "pretrained", fractions[fi], seed,
                     downstream_dice(&pretrained, arch, sub, data.test, cfg, base.substream(100)));
      push_dice_rows(rows, "lowshot", "scratch", fractions[fi], seed,
                     downstream_dice(nullptr, arch, sub, data.test, cfg, base.substream(100)));
    }
  }
  return rows;
}

// One solver per (grid, seed) on identical volumes, then identical
// fine-tuning. `hashes` receives the downstream training-set hash per row.
inline std::vector<MetricRow> complexity_ablation(std::span<const MultimodalVolume> volumes,
                                                  std::span<const std::size_t> grids, const PretrainConfig& pcfg,
                                                  const DownstreamData& data, const DownstreamConfig& dcfg,
                                                  std::span<const std::uint64_t> seeds,
                                                  std::vector<std::uint64_t>* hashes = nullptr) {
  std::vector<MetricRow> rows;
  for (std::size_t g : grids) {
    PretrainConfig cfg = pcfg;
    cfg.puzzle.grid = g;
    cfg.puzzle.patch_len = 0;
    cfg.puzzle.perm_pool.clear();
    for (std::uint64_t seed : seeds) {
      Rng base(seed);
      const auto pre = pretrain_solver(volumes, cfg, base.substream(1));
      if (hashes) hashes->push_back(dataset_hash(data.train));
      push_dice_rows(rows, "complexity", "grid" + std::to_string(g), static_cast<double>(g), seed,
                     downstream_dice(&pre.params, cfg.arch, data.train, data.test, dcfg, base.substream(100)));
    }
  }
  return rows;
}

// Pretrains on all modalities ("multimodal") and on modality 0 alone
// ("single"), then fine-tunes both on the same multimodal downstream data.
inline std::vector<MetricRow> modality_comparison(std::span<const MultimodalVolume> volumes, const PretrainConfig& pcfg,
                                                  const DownstreamData& data, const DownstreamConfig& dcfg,
                                                  std::span<const std::uint64_t> seeds) {
  std::vector<MultimodalVolume> single;
  const std::size_t first[] = {0};
  for (const auto& v : volumes) single.push_back(select_modalities(v, first));
  std::vector<MetricRow> rows;
  for (std::uint64_t seed : seeds) {
    Rng base(seed);
    const auto multi = pretrain_solver(volumes, pcfg, base.substream(1));
    push_dice_rows(rows, "modality", "multimodal", 0.0, seed,
                   downstream_dice(&multi.params, pcfg.arch, data.train, data.test, dcfg, base.substream(100)));
    const auto one = pretrain_solver(std::span<const MultimodalVolume>(single), pcfg, base.substream(1));
    push_dice_rows(rows, "modality", "single", 0.0, seed,
                   downstream_dice(&one.params, pcfg.arch, data.train, data.test, dcfg, base.substream(100)));
  }
  return rows;
}

// Mean and sample standard deviation of the "mean" rows matching arm and key.
struct ArmStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

inline ArmStats arm_stats(std::span<const MetricRow> rows, const std::string& arm, double key,
                          const std::string& cls = "mean") {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.arm == arm && r.cls == cls && r.fraction_or_grid == key) v.push_back(r.value);
  ArmStats s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace mmjigsaw
