#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace mmjigsaw;
using namespace mmjigsaw::testing;

namespace {

// Puzzle whose grid cell k is the constant (k + 1) / (N + 1).
Puzzle constant_puzzle(std::size_t grid, std::size_t len, std::uint64_t seed) {
  const std::size_t n = grid * grid;
  Puzzle pz;
  Rng rng(seed);
  pz.truth = Permutation::random(n, rng);
  pz.ordered = Tensor({n, len, len});
  pz.patches = Tensor({n, len, len});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < len * len; ++i) pz.ordered[k * len * len + i] = static_cast<float>(k + 1) / (n + 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len * len; ++j)
      pz.patches[i * len * len + j] = pz.ordered[pz.truth[i] * len * len + j];
  pz.source_modalities.assign(n, 0);
  pz.source_synthetic.assign(n, 0);
  pz.anchors.resize(n);
  return pz;
}

// Encoder passes patch intensity through channel 0; the head scores position
// j by -K (c - v_j)^2 up to a per-row constant.
SolverParams rigged_params(std::size_t n, double sharpness) {
  EncoderArch arch = small_arch(4);
  arch.normalize = false;
  SolverParams p = SolverParams::make(arch, n);
  for (auto* t : p.tensors()) t->fill(0.0f);
  for (auto& layer : p.encoder) {
    const std::size_t in = layer.weight.dim(1), k = layer.weight.dim(2);
    layer.weight[(0 * in + 0) * k * k + (k / 2) * k + k / 2] = 1.0f;
  }
  const std::size_t c = arch.channels.back();
  for (std::size_t j = 0; j < n; ++j) {
    const double v = static_cast<double>(j + 1) / (n + 1);
    p.head.weight[j * c + 0] = static_cast<float>(2.0 * sharpness * v);
    p.head.bias[j] = static_cast<float>(-sharpness * v * v);
  }
  return p;
}

SolverConfig quick_config(double lr = 1e-3) {
  SolverConfig cfg;
  cfg.adam.lr = lr;
  cfg.batch_size = 4;
  return cfg;
}

}  // namespace

TEST(Solver, ZeroParamsReconstructMeanPatch) {
  const auto pz = toy_puzzle(3, 6, 1);
  auto p = SolverParams::make(small_arch(6), 9);
  const auto out = forward(p, pz, 20, 1.0);
  const std::size_t area = 36;
  for (std::size_t k = 0; k < 9; ++k)
    for (std::size_t i = 0; i < area; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 9; ++j) mean += pz.patches[j * area + i];
      EXPECT_NEAR(out.recon[k * area + i], mean / 9.0, 1e-5);
    }
}

TEST(Solver, RiggedParamsSolvePuzzle) {
  const auto pz = constant_puzzle(3, 6, 2);
  const auto p = rigged_params(9, 2000.0);
  const auto out = forward(p, pz, 50, 1.0);
  EXPECT_EQ(hard_decode(out.soft), pz.truth);
  EXPECT_LT(puzzle_loss(out.recon, pz.ordered), 1e-6);
  const std::vector<Puzzle> one{pz};
  EXPECT_DOUBLE_EQ(evaluate(p, std::span<const Puzzle>(one), SolverConfig{}).accuracy, 1.0);
}

TEST(Solver, ForwardIsDeterministic) {
  const auto pz = toy_puzzle(2, 8, 3);
  const auto p = init_params(small_arch(), 4, Rng(1), {0.0, 0.3});
  const auto a = forward(p, pz, 20, 1.0), b = forward(p, pz, 20, 1.0);
  EXPECT_TRUE(a.recon == b.recon);
}

TEST(Solver, PatchCountMismatchIsDimensionError) {
  const auto pz = toy_puzzle(3, 6, 4);
  const auto p = init_params(small_arch(), 4, Rng(1));
  EXPECT_THROW(forward(p, pz, 20, 1.0), DimensionError);
}

TEST(PuzzleLoss, Examples) {
  Tensor a({2, 2, 2}), b({2, 2, 2});
  EXPECT_DOUBLE_EQ(puzzle_loss(a, b), 0.0);
  b.fill(1.0f);
  EXPECT_DOUBLE_EQ(puzzle_loss(a, b), 1.0);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<float>(rng.normal());
      b[i] = static_cast<float>(rng.normal());
      const double d = static_cast<double>(a[i]) - b[i];
      ss += d * d;
    }
    EXPECT_NEAR(puzzle_loss(a, b), ss / 8.0, 1e-12);
  }
  EXPECT_THROW(puzzle_loss(a, Tensor({2, 2})), DimensionError);
}

TEST(Solver, PermutingInputPatchesLeavesReconstructionUnchanged) {
  const auto pz = toy_puzzle(2, 8, 6);
  const auto p = init_params(small_arch(), 4, Rng(2), {0.0, 0.3});
  Rng rng(7);
  const auto q = Permutation::random(4, rng);
  Tensor moved(pz.patches.shape());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 64; ++j) moved[q[i] * 64 + j] = pz.patches[i * 64 + j];
  const auto a = forward<float>(p, pz.patches, 20, 1.0), b = forward<float>(p, moved, 20, 1.0);
  for (std::size_t i = 0; i < a.recon.size(); ++i) EXPECT_NEAR(a.recon[i], b.recon[i], 1e-5);
}

TEST(Solver, EndToEndGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LT(solver_gradcheck(toy_puzzle(2, 8, seed), small_arch(8), 5, 0.1, seed), 1e-3) << "seed " << seed;
  }
}

TEST(Init, StatisticsAndDeterminism) {
  const auto p = init_params(EncoderArch{}, 9, Rng(3));
  double s = 0.0, ss = 0.0;
  std::size_t n = 0;
  for (const auto* t : p.weight_tensors())
    for (float v : t->data()) {
      s += v;
      ss += static_cast<double>(v) * v;
      ++n;
    }
  const double mean = s / n, sd = std::sqrt(ss / n - mean * mean);
  EXPECT_NEAR(mean, 0.1, 1e-4);
  EXPECT_NEAR(sd, 0.001, 1e-4);
  EXPECT_TRUE(p == init_params(EncoderArch{}, 9, Rng(3)));
  EXPECT_FALSE(p == init_params(EncoderArch{}, 9, Rng(4)));
  const auto flat = init_params(EncoderArch{}, 9, Rng(3), {0.1, 0.0});
  for (const auto* t : flat.weight_tensors())
    for (float v : t->data()) EXPECT_EQ(v, 0.1f);
  for (const auto& l : flat.encoder)
    for (float v : l.bias.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Training, ZeroLearningRateLeavesParams) {
  const auto puzzles = toy_puzzles(4, 2, 8, 8);
  auto p = init_params(small_arch(), 4, Rng(1), {0.0, 0.3});
  const auto before = p;
  auto cfg = quick_config(0.0);
  cfg.l2_lambda = 0.0;
  train_solver(p, std::span<const Puzzle>(puzzles), {}, cfg, {3, 2.0, 1}, Rng(2));
  EXPECT_TRUE(p == before);
}

TEST(Training, EvaluateDoesNotMutate) {
  const auto puzzles = toy_puzzles(3, 2, 8, 9);
  const auto p = init_params(small_arch(), 4, Rng(1), {0.0, 0.3});
  auto copy = p;
  evaluate(copy, std::span<const Puzzle>(puzzles), SolverConfig{});
  EXPECT_TRUE(copy == p);
}

TEST(Training, OverfitsSinglePuzzle) {
  const std::vector<Puzzle> one{toy_puzzle(2, 8, 10)};
  auto p = init_params(small_arch(), 4, Rng(3), {0.0, 0.3});
  auto cfg = quick_config(1e-2);
  cfg.l2_lambda = 0.0;
  const auto report = train_solver(p, std::span<const Puzzle>(one), std::span<const Puzzle>(one), cfg,
                                   {200, 1.0, 1}, Rng(4));
  EXPECT_DOUBLE_EQ(report.rows.back().accuracy, 1.0);
}

TEST(Training, SameSeedSameReport) {
  const auto puzzles = toy_puzzles(6, 2, 8, 11);
  auto run = [&] {
    auto p = init_params(small_arch(), 4, Rng(5), {0.0, 0.3});
    auto r = train_solver(p, std::span<const Puzzle>(puzzles), std::span<const Puzzle>(puzzles), quick_config(),
                          {3, 2.0, 1}, Rng(6));
    return std::pair{r.to_csv(false), p};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(a.second == b.second);
}

TEST(Training, UntrainedAccuracyNearChance) {
  const auto puzzles = toy_puzzles(200, 2, 8, 12);
  const auto p = init_params(small_arch(), 4, Rng(7));
  const double acc = evaluate(p, std::span<const Puzzle>(puzzles), SolverConfig{}).accuracy;
  EXPECT_NEAR(acc, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / 200.0) + 0.05);
}

TEST(Training, LossDecreases) {
  const auto v = synth_dataset(1, {32, 32, 32}, 2, Rng(13))[0].volume;
  PuzzleSpec spec;
  spec.grid = 2;
  spec.jitter = 2;
  spec.per_slice = 4;
  auto puzzles = create_puzzles(v, spec, Rng(14));
  puzzles.resize(std::min<std::size_t>(puzzles.size(), 100));
  auto p = init_params(small_arch(), 4, Rng(8), {0.0, 0.3});
  const auto report =
      train_solver(p, std::span<const Puzzle>(puzzles), {}, quick_config(3e-3), {50, 2.0, 1}, Rng(9));
  ASSERT_EQ(report.rows.size(), 50u);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += report.rows[i].loss;
    last += report.rows[45 + i].loss;
  }
  EXPECT_LT(last, first);
}

TEST(Training, DivergenceIsReported) {
  const auto puzzles = toy_puzzles(2, 2, 8, 15);
  auto p = init_params(small_arch(), 4, Rng(1), {0.0, 0.3});
  p.head.weight[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(train_solver(p, std::span<const Puzzle>(puzzles), {}, quick_config(), {1, 2.0, 1}, Rng(0)),
               NumericError);
}

TEST(Training, CsvHasHeaderAndRows) {
  TrainReport r;
  r.rows.push_back({1, 0.5, 0.25, 1.5});
  EXPECT_EQ(r.to_csv(false), "epoch,loss,accuracy,seconds\n1,0.5,0.25,0\n");
  EXPECT_EQ(r.to_csv(true), "epoch,loss,accuracy,seconds\n1,0.5,0.25,1.5\n");
}
