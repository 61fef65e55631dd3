#pragma once

// Semi-supervised cross-modal sweep: for each fraction f the translator sees
// the paired slices of the first ceil(f * n) volumes, synthesizes the target
// modality for the rest, and the mixed real + synthetic set is used for
// puzzle pretraining followed by downstream fine-tuning.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/crossmodal/translator.hpp"
#include "mmjigsaw/transfer/experiments.hpp"

namespace mmjigsaw {

struct SweepConfig {
  std::size_t source = 0;
  std::size_t target = 1;
  TranslatorConfig translator{};
  std::size_t max_pairs = 0;  // 0: every slice pair of the paired volumes
  PretrainConfig pretrain{};
  DownstreamConfig downstream{};
};

struct SweepRow {
  double fraction = 0.0;
  double metric = 0.0;  // mean foreground dice
  std::uint64_t seed = 0;
  std::size_t paired_volumes = 0;
  std::size_t synthetic_volumes = 0;
};

inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os.precision(9);
  os << "fraction,metric,seed\n";
  for (const auto& r : rows) os << r.fraction << ',' << r.metric << ',' << r.seed << '\n';
  return os.str();
}

// Volume set with the target modality of volumes [paired, n) replaced by the
// translation of their source modality.
inline std::vector<MultimodalVolume> mixed_volumes(std::span<const MultimodalVolume> volumes, double fraction,
                                                   const SweepConfig& cfg, Rng rng, std::size_t* paired_out = nullptr) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("translator fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const auto paired = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(volumes.size()) - 1e-9)));
  if (paired_out) *paired_out = paired;
  std::vector<MultimodalVolume> out(volumes.begin(), volumes.end());
  if (paired >= volumes.size()) return out;
  std::vector<PairedSlices> pairs;
  for (std::size_t i = 0; i < paired; ++i) {
    for (auto& p : slice_pairs(volumes[i], cfg.source, cfg.target)) pairs.push_back(std::move(p));
  }
  if (cfg.max_pairs != 0 && pairs.size() > cfg.max_pairs) {
    std::vector<PairedSlices> kept;
    const double step = static_cast<double>(pairs.size()) / static_cast<double>(cfg.max_pairs);
    for (std::size_t k = 0; k < cfg.max_pairs; ++k) kept.push_back(pairs[static_cast<std::size_t>(k * step)]);
    pairs = std::move(kept);
  }
  const auto trained = train_translator<float>(std::span<const PairedSlices>(pairs), cfg.translator, rng);
  for (std::size_t i = paired; i < volumes.size(); ++i) {
    out[i] = synthesize(trained.first, volumes[i], cfg.source, cfg.target);
  }
  return out;
}

inline std::vector<SweepRow> semi_supervised_sweep(std::span<const MultimodalVolume> volumes,
                                                   std::span<const double> fractions, const DownstreamData& data,
                                                   const SweepConfig& cfg, std::span<const std::uint64_t> seeds) {
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep fractions must lie in (0, 1], got " + std::to_string(f));
  }
  std::vector<SweepRow> rows;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    for (std::uint64_t seed : seeds) {
      Rng base(seed);
      SweepRow row;
      row.fraction = fractions[fi];
      row.seed = seed;
      const auto mixed = mixed_volumes(volumes, fractions[fi], cfg, base.substream(7), &row.paired_volumes);
      row.synthetic_volumes = volumes.size() - std::min(volumes.size(), row.paired_volumes);
      const auto pre = pretrain_solver(std::span<const MultimodalVolume>(mixed), cfg.pretrain, base.substream(1));
      row.metric = mean_foreground_dice(
          downstream_dice(&pre.params, cfg.pretrain.arch, data.train, data.test, cfg.downstream, base.substream(100)));
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace mmjigsaw
