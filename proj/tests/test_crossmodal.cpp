#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace mmjigsaw;
using namespace mmjigsaw::testing;

namespace {

struct RefLosses {
  double d, adv, l1, g;
};

RefLosses reference_losses(const Tensor& g, const Tensor& b, const Tensor& dr, const Tensor& df, double lambda) {
  const double eps = 1e-7;
  auto c = [eps](double s) { return s < eps ? eps : (s > 1 - eps ? 1 - eps : s); };
  double lr = 0, lf = 0, adv = 0, l1 = 0;
  for (std::size_t i = 0; i < dr.size(); ++i) lr += std::log(c(dr[i]));
  for (std::size_t i = 0; i < df.size(); ++i) {
    lf += std::log(1 - c(df[i]));
    adv += std::log(c(df[i]));
  }
  for (std::size_t i = 0; i < g.size(); ++i) l1 += std::fabs(static_cast<double>(g[i]) - b[i]);
  RefLosses r;
  r.d = -(lr / dr.size() + lf / df.size());
  r.adv = -adv / df.size();
  r.l1 = l1 / g.size();
  r.g = r.adv + lambda * r.l1;
  return r;
}

Tensor random_tensor(Shape s, Rng& rng, double lo, double hi) {
  Tensor t(std::move(s));
  for (auto& x : t.data()) x = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return t;
}

std::vector<PairedSlices> task_pairs(const MultimodalVolume& v, bool invert) {
  auto pairs = slice_pairs(v, 0, 0);
  if (invert)
    for (auto& p : pairs)
      for (auto& x : p.b.data()) x = 1.0f - x;
  return pairs;
}

const std::vector<SynthCase>& cases() {
  static const auto c = synth_dataset(2, {32, 32, 32}, 2, Rng(1));
  return c;
}

TranslatorConfig l1_only(std::size_t epochs, double lr = 2e-4) {
  TranslatorConfig cfg;
  cfg.adversarial_weight = 0.0;
  cfg.epochs = epochs;
  cfg.g_adam.lr = lr;
  return cfg;
}

// 32 slices in batches of 8: 4 steps per epoch, 200 steps.
const TranslatorParams& identity_translator() {
  static const auto trained = [] {
    const auto pairs = task_pairs(cases()[0].volume, false);
    return train_translator<float>(std::span<const PairedSlices>(pairs), l1_only(50), Rng(3));
  }();
  return trained.first;
}

bool same_tensors(const std::vector<const Tensor*>& a, const std::vector<const Tensor*>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i] == *b[i])) return false;
  return true;
}

}  // namespace

TEST(CganLosses, IdenticalOutputHasZeroL1) {
  Rng rng(1);
  const auto g = random_tensor({1, 4, 4}, rng, 0, 1);
  const auto d = random_tensor({1, 2, 2}, rng, 0.1, 0.9);
  for (double lambda : {0.0, 1.0, 100.0}) {
    const auto r = cgan_losses(g, g, d, d, lambda);
    EXPECT_EQ(r.l1, 0.0);
    EXPECT_DOUBLE_EQ(r.generator, r.adversarial);
  }
}

TEST(CganLosses, PerfectDiscrimination) {
  Tensor g({1, 2, 2}), real({1, 1, 1}, static_cast<float>(1.0 - 1e-7)), fake({1, 1, 1}, 1e-7f);
  EXPECT_LT(cgan_losses(g, g, real, fake, 100.0).discriminator, 1e-5);
}

TEST(CganLosses, SaturatedScoresAreClamped) {
  Tensor g({1, 2, 2}), ones({1, 2, 2}, 1.0f), zeros({1, 2, 2}, 0.0f);
  const auto r = cgan_losses(g, g, zeros, ones, 100.0);
  EXPECT_TRUE(std::isfinite(r.discriminator));
  EXPECT_NEAR(r.discriminator, -2.0 * std::log(1e-7), 1e-6);
  EXPECT_TRUE(std::isfinite(cgan_losses(g, g, ones, zeros, 100.0).generator));
}

TEST(CganLosses, MatchesRecomputation) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = random_tensor({1, 6, 5}, rng, 0, 1), b = random_tensor({1, 6, 5}, rng, 0, 1);
    const auto dr = random_tensor({1, 3, 3}, rng, 0.001, 0.999), df = random_tensor({1, 3, 3}, rng, 0.001, 0.999);
    const auto r = cgan_losses(g, b, dr, df, 100.0);
    const auto ref = reference_losses(g, b, dr, df, 100.0);
    EXPECT_NEAR(r.discriminator, ref.d, 1e-6);
    EXPECT_NEAR(r.adversarial, ref.adv, 1e-6);
    EXPECT_NEAR(r.l1, ref.l1, 1e-6);
    EXPECT_NEAR(r.generator, ref.g, 1e-6);
  }
}

TEST(CganLosses, ShapeMismatch) {
  Tensor a({1, 2, 2}), b({1, 2, 3}), d({1, 1, 1}, 0.5f);
  EXPECT_THROW(cgan_losses(a, b, d, d, 1.0), DimensionError);
}

TEST(Translator, NegativeLambdaRejected) {
  EXPECT_THROW(TranslatorParams::make(TranslatorArch{}, -1.0), ConfigError);
}

TEST(Translator, IdentityTaskLearned) {
  const auto held = task_pairs(cases()[1].volume, false);
  EXPECT_LT(heldout_l1(identity_translator(), std::span<const PairedSlices>(held)), 0.05);
}

TEST(Translator, InversionTaskLearned) {
  const auto train = task_pairs(cases()[0].volume, true), held = task_pairs(cases()[1].volume, true);
  // 125 epochs of 4 steps.
  const auto [p, curves] = train_translator<float>(std::span<const PairedSlices>(train), l1_only(125, 2e-3), Rng(4));
  EXPECT_EQ(p.trained_steps, 500u);
  EXPECT_LT(heldout_l1(p, std::span<const PairedSlices>(held)), 0.05);
}

TEST(Translator, ZeroLearningRateLeavesInit) {
  const auto pairs = task_pairs(cases()[0].volume, false);
  auto cfg = l1_only(2, 0.0);
  cfg.adversarial_weight = 1.0;
  cfg.d_adam.lr = 0.0;
  const auto [p, curves] = train_translator<float>(std::span<const PairedSlices>(pairs), cfg, Rng(5));
  const auto init = init_translator(cfg.arch, Rng(5).substream(0), cfg.lambda, cfg.init_mean, cfg.init_stddev);
  EXPECT_TRUE(same_tensors(p.tensors(), init.tensors()));
  EXPECT_EQ(curves.rows.size(), 8u);
}

TEST(Translator, L1OnlyModeIsBitwiseRepeatable) {
  const auto pairs = task_pairs(cases()[0].volume, true);
  const auto a = train_translator<float>(std::span<const PairedSlices>(pairs), l1_only(2), Rng(6));
  const auto b = train_translator<float>(std::span<const PairedSlices>(pairs), l1_only(2), Rng(6));
  EXPECT_EQ(a.second.to_csv(), b.second.to_csv());
  EXPECT_TRUE(a.first == b.first);
}

TEST(Translator, GeneratorAndDiscriminatorUpdatesAreDisjoint) {
  const auto pairs = task_pairs(cases()[0].volume, true);
  const std::span<const PairedSlices> batch(pairs.data(), 4);
  const auto init = init_translator(TranslatorArch{}, Rng(7));
  const auto g_of = [](const TranslatorParams& p) { return layer_tensors(p.generator.layers()); };
  const auto d_of = [](const TranslatorParams& p) { return layer_tensors(p.discriminator.layers()); };

  TranslatorConfig d_only;
  d_only.g_adam.lr = 0.0;
  auto p = init;
  TranslatorState<float> s1;
  translator_step(p, batch, s1, d_only);
  EXPECT_TRUE(same_tensors(g_of(p), g_of(init)));
  EXPECT_FALSE(same_tensors(d_of(p), d_of(init)));

  TranslatorConfig g_only;
  g_only.d_adam.lr = 0.0;
  auto q = init;
  TranslatorState<float> s2;
  translator_step(q, batch, s2, g_only);
  EXPECT_TRUE(same_tensors(d_of(q), d_of(init)));
  EXPECT_FALSE(same_tensors(g_of(q), g_of(init)));

  TranslatorConfig l1;
  l1.adversarial_weight = 0.0;
  auto r = init;
  TranslatorState<float> s3;
  translator_step(r, batch, s3, l1);
  EXPECT_TRUE(same_tensors(d_of(r), d_of(init)));
}

TEST(Translator, AdversarialTrainingRunsAndRecordsCurves) {
  const auto pairs = task_pairs(cases()[0].volume, true);
  TranslatorConfig cfg;
  cfg.epochs = 1;
  const auto [p, curves] = train_translator<float>(std::span<const PairedSlices>(pairs), cfg, Rng(8));
  ASSERT_EQ(curves.rows.size(), 4u);
  for (const auto& r : curves.rows) {
    EXPECT_TRUE(std::isfinite(r.generator));
    EXPECT_GT(r.discriminator, 0.0);
  }
  EXPECT_EQ(curves.to_csv().substr(0, 32), "step,generator,discriminator,l1\n");
}

TEST(Translator, BadPairsRejected) {
  EXPECT_THROW(train_translator<float>({}, l1_only(1), Rng(0)), DataError);
  std::vector<PairedSlices> bad{{Tensor({1, 4, 4}), Tensor({1, 4, 5})}};
  EXPECT_THROW(train_translator<float>(std::span<const PairedSlices>(bad), l1_only(1), Rng(0)), DimensionError);
}

TEST(Synthesize, IdentityTranslatorReproducesSource) {
  const auto& v = cases()[1].volume;
  const auto out = synthesize(identity_translator(), v, 0, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < out.modality(1).size(); ++i) s += std::abs(out.modality(1)[i] - v.modality(0)[i]);
  EXPECT_LT(s / static_cast<double>(out.modality(1).size()), 0.05);
  EXPECT_TRUE(out.is_synthetic(1));
  EXPECT_FALSE(out.is_synthetic(0));
  for (std::size_t i = 0; i < v.modality(0).size(); ++i) ASSERT_EQ(out.modality(0)[i], v.modality(0)[i]);
}

TEST(Synthesize, IsPure) {
  const auto& v = cases()[1].volume;
  EXPECT_TRUE(synthesize(identity_translator(), v, 0, 1) == synthesize(identity_translator(), v, 0, 1));
}

TEST(Synthesize, ZeroSourceStaysInRange) {
  MultimodalVolume v(2, {2, 16, 16});
  const auto out = synthesize(identity_translator(), v, 0, 1);
  for (float x : out.modality(1)) {
    EXPECT_TRUE(std::isfinite(x));
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 1.0f);
  }
}

TEST(Synthesize, UntrainedTranslatorRejected) {
  const auto p = init_translator(TranslatorArch{}, Rng(0));
  EXPECT_THROW(synthesize(p, cases()[0].volume, 0, 1), ConfigError);
  EXPECT_THROW(synthesize(identity_translator(), cases()[0].volume, 0, 2), DataError);
}

TEST(Synthesize, ProvenanceFlowsIntoPuzzles) {
  const auto mixed = synthesize(identity_translator(), cases()[0].volume, 0, 1);
  PuzzleSpec spec;
  spec.grid = 3;
  spec.jitter = 2;
  std::size_t real = 0, fake = 0;
  for (const auto& pz : create_puzzles(mixed, spec, Rng(2)))
    for (std::size_t i = 0; i < pz.n(); ++i) {
      ASSERT_EQ(pz.source_synthetic[i], pz.source_modalities[i]);
      (pz.source_synthetic[i] ? fake : real)++;
    }
  EXPECT_GT(real, 0u);
  EXPECT_GT(fake, 0u);
}

TEST(Sweep, FullFractionKeepsAllVolumesReal) {
  std::vector<MultimodalVolume> vols{cases()[0].volume, cases()[1].volume};
  std::size_t paired = 0;
  const auto out = mixed_volumes(std::span<const MultimodalVolume>(vols), 1.0, SweepConfig{}, Rng(0), &paired);
  EXPECT_EQ(paired, 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_TRUE(out[i] == vols[i]);
  EXPECT_THROW(mixed_volumes(std::span<const MultimodalVolume>(vols), 0.0, SweepConfig{}, Rng(0)), ConfigError);
}

TEST(Sweep, PartialFractionSynthesizesTheRest) {
  std::vector<MultimodalVolume> vols{cases()[0].volume, cases()[1].volume};
  SweepConfig cfg;
  cfg.translator = l1_only(1);
  cfg.max_pairs = 8;
  std::size_t paired = 0;
  const auto out = mixed_volumes(std::span<const MultimodalVolume>(vols), 0.5, cfg, Rng(0), &paired);
  EXPECT_EQ(paired, 1u);
  EXPECT_TRUE(out[0] == vols[0]);
  EXPECT_TRUE(out[1].is_synthetic(1));
  EXPECT_FALSE(out[1].is_synthetic(0));
}

TEST(Sweep, SingleFullFractionRowEqualsAllRealPipeline) {
  std::vector<MultimodalVolume> vols{cases()[0].volume, cases()[1].volume};
  const auto labeled = labeled_slices(std::span<const SynthCase>(cases()), 0.05, 4);
  DownstreamData data;
  data.train.classes = data.test.classes = labeled.classes;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    (i % 2 ? data.test : data.train).slices.push_back(labeled.slices[i]);

  SweepConfig cfg;
  cfg.pretrain.arch = small_arch(12);
  cfg.pretrain.arch.in_channels = 1;
  cfg.pretrain.puzzle.grid = 2;
  cfg.pretrain.max_puzzles = 8;
  cfg.pretrain.train.epochs = 2;
  cfg.downstream.finetune.epochs = 2;
  cfg.downstream.finetune.adam.lr = 1e-3;
  const double fractions[] = {1.0};
  const std::uint64_t seeds[] = {3};
  const auto rows = semi_supervised_sweep(std::span<const MultimodalVolume>(vols), fractions, data, cfg, seeds);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].synthetic_volumes, 0u);
  EXPECT_EQ(sweep_csv(rows).substr(0, 21), "fraction,metric,seed\n");

  Rng base(3);
  const auto pre = pretrain_solver(std::span<const MultimodalVolume>(vols), cfg.pretrain, base.substream(1));
  const double real = mean_foreground_dice(
      downstream_dice(&pre.params, cfg.pretrain.arch, data.train, data.test, cfg.downstream, base.substream(100)));
  EXPECT_EQ(rows[0].metric, real);
}
