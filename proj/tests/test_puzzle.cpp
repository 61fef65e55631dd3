#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "mmjigsaw/permute/assignment.hpp"
#include "mmjigsaw/permute/permutation.hpp"
#include "mmjigsaw/puzzle/puzzle.hpp"
#include "mmjigsaw/puzzle/synth.hpp"
#include "mmjigsaw/puzzle/volume.hpp"

using namespace mmjigsaw;

namespace {

MultimodalVolume noise_volume(std::size_t m, Dims d, std::uint64_t seed) {
  MultimodalVolume v(m, d);
  Rng rng(seed);
  for (auto& x : v.data()) x = static_cast<float>(0.1 + 0.9 * rng.uniform());
  return v;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

}  // namespace

TEST(Preprocess, NormalisedVolumeAtTargetIsUnchanged) {
  auto v = noise_volume(2, {4, 5, 6}, 1);
  for (std::size_t m = 0; m < 2; ++m) {
    v.modality(m)[0] = 0.0f;
    v.modality(m)[1] = 1.0f;
  }
  const auto out = preprocess(v, v.dims());
  for (std::size_t i = 0; i < v.data().size(); ++i) EXPECT_NEAR(out.data()[i], v.data()[i], 1e-6);
}

TEST(Preprocess, ConstantModalityIsError) {
  MultimodalVolume v(2, {3, 3, 3});
  for (auto& x : v.modality(0)) x = 0.5f;
  auto m1 = v.modality(1);
  for (std::size_t i = 0; i < m1.size(); ++i) m1[i] = static_cast<float>(i);
  EXPECT_THROW(preprocess(v, v.dims()), DataError);
}

TEST(Preprocess, RampDownsampleMatchesAnalyticTrilinear) {
  // A linear field is reproduced exactly by trilinear interpolation, so the
  // oracle evaluates it at half-pixel source centres.
  const Dims from{4, 4, 4}, to{2, 2, 2};
  auto f = [](double z, double y, double x) { return x + 2.0 * y + 4.0 * z; };
  MultimodalVolume v(1, from);
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) v.at(0, z, y, x) = static_cast<float>(f(z, y, x));
  const auto r = resize_trilinear(v.modality(0), from, to);
  auto src = [](std::size_t d) { return (static_cast<double>(d) + 0.5) * 2.0 - 0.5; };
  double lo = 1e9, hi = -1e9;
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) {
        const double expect = f(src(z), src(y), src(x));
        EXPECT_NEAR(r[(z * 2 + y) * 2 + x], expect, 1e-5);
        lo = std::min(lo, expect);
        hi = std::max(hi, expect);
      }
  const auto p = preprocess(v, to);
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x)
        EXPECT_NEAR(p.at(0, z, y, x), (f(src(z), src(y), src(x)) - lo) / (hi - lo), 1e-6);
}

TEST(Preprocess, OutputInUnitRange) {
  auto v = noise_volume(3, {5, 7, 6}, 2);
  for (auto& x : v.data()) x = x * 300.0f - 40.0f;
  const auto p = preprocess(v, {8, 8, 8});
  for (float x : p.data()) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 1.0f);
  }
}

TEST(CreatePuzzles, CountIsSlicesTimesPerSlice) {
  const auto v = noise_volume(2, {3, 32, 32}, 3);
  PuzzleSpec spec;
  spec.grid = 2;
  spec.per_slice = 2;
  EXPECT_EQ(create_puzzles(v, spec, Rng(1)).size(), 6u);
  for (std::size_t nps : {1, 3, 4}) {
    spec.per_slice = nps;
    EXPECT_EQ(create_puzzles(v, spec, Rng(1)).size(), 3 * nps);
  }
}

TEST(CreatePuzzles, SingleModalityAlwaysSourceZero) {
  const auto v = noise_volume(1, {4, 32, 32}, 4);
  PuzzleSpec spec;
  spec.grid = 3;
  spec.jitter = 2;
  for (const auto& pz : create_puzzles(v, spec, Rng(2)))
    for (auto m : pz.source_modalities) EXPECT_EQ(m, 0);
}

TEST(CreatePuzzles, FixedSeedIsReproducible) {
  const auto v = noise_volume(2, {4, 32, 32}, 5);
  PuzzleSpec spec;
  spec.grid = 2;
  spec.per_slice = 2;
  const auto a = create_puzzles(v, spec, Rng(9)), b = create_puzzles(v, spec, Rng(9));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(same_bytes(a[i].patches, b[i].patches));
    EXPECT_EQ(a[i].truth, b[i].truth);
    EXPECT_EQ(a[i].source_modalities, b[i].source_modalities);
    EXPECT_EQ(a[i].anchors, b[i].anchors);
  }
  const auto c = create_puzzles(v, spec, Rng(10));
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= !(a[i].truth == c[i].truth);
  EXPECT_TRUE(differs);
}

TEST(CreatePuzzles, UnshuffleRestoresGridOrder) {
  const auto v = noise_volume(2, {6, 40, 40}, 6);
  PuzzleSpec spec;
  spec.grid = 3;
  spec.per_slice = 3;
  for (const auto& pz : create_puzzles(v, spec, Rng(3))) {
    const auto restored = apply_soft(perm_to_matrix(pz.truth), pz.patches);
    EXPECT_TRUE(same_bytes(restored, pz.ordered));
    // The ordered stack really is the slice content at the anchors.
    const std::size_t l = pz.patch_len();
    for (std::size_t cell = 0; cell < pz.n(); ++cell) {
      const std::size_t i = pz.truth.inverse()[cell];
      const auto src = v.slice(pz.source_modalities[i], pz.slice);
      const auto a = pz.anchors[cell];
      EXPECT_EQ(pz.ordered.at(cell, 0, 0), src[a.y * 40 + a.x]);
      EXPECT_EQ(pz.ordered.at(cell, l - 1, l - 1), src[(a.y + l - 1) * 40 + a.x + l - 1]);
    }
  }
}

TEST(CreatePuzzles, JitterBound) {
  const auto v = noise_volume(2, {8, 48, 48}, 7);
  for (std::size_t jitter : {0, 1, 3, 5}) {
    PuzzleSpec spec;
    spec.grid = 3;
    spec.jitter = jitter;
    std::set<long> seen;
    for (const auto& pz : create_puzzles(v, spec, Rng(4))) {
      for (std::size_t cell = 0; cell < pz.n(); ++cell) {
        const auto nom = nominal_anchor(spec, v.dims(), cell / 3, cell % 3);
        const long dy = static_cast<long>(pz.anchors[cell].y) - static_cast<long>(nom.y);
        const long dx = static_cast<long>(pz.anchors[cell].x) - static_cast<long>(nom.x);
        EXPECT_LE(std::abs(dy), static_cast<long>(jitter));
        EXPECT_LE(std::abs(dx), static_cast<long>(jitter));
        seen.insert(dy);
      }
    }
    if (jitter > 0) EXPECT_GT(seen.size(), 1u);
  }
}

TEST(CreatePuzzles, ModalityMixingIsBalanced) {
  const auto v = noise_volume(2, {40, 32, 32}, 8);
  PuzzleSpec spec;
  spec.grid = 3;
  spec.jitter = 2;
  spec.per_slice = 4;
  std::size_t ones = 0, total = 0;
  for (const auto& pz : create_puzzles(v, spec, Rng(5))) {
    for (auto m : pz.source_modalities) {
      ones += m;
      ++total;
    }
  }
  ASSERT_GE(total, 1000u);
  const double p = static_cast<double>(ones) / static_cast<double>(total);
  EXPECT_LT(std::abs(p - 0.5), 3.0 * std::sqrt(0.25 / static_cast<double>(total)));
}

TEST(CreatePuzzles, PermutationPoolIsRespected) {
  const auto v = noise_volume(1, {10, 32, 32}, 9);
  PuzzleSpec spec;
  spec.grid = 2;
  spec.perm_pool = make_perm_pool(4, 3, Rng(6));
  for (const auto& pz : create_puzzles(v, spec, Rng(7))) {
    bool found = false;
    for (const auto& p : spec.perm_pool) found |= p == pz.truth;
    EXPECT_TRUE(found);
  }
  spec.perm_pool.push_back(Permutation::identity(9));
  EXPECT_THROW(create_puzzles(v, spec, Rng(7)), DataError);
}

TEST(CreatePuzzles, IncompatibleSpecFailsUpFront) {
  const auto v = noise_volume(1, {2, 16, 16}, 10);
  PuzzleSpec spec;
  spec.grid = 5;
  spec.jitter = 5;
  EXPECT_THROW(create_puzzles(v, spec, Rng(0)), DataError);
  spec.grid = 1;
  EXPECT_THROW(create_puzzles(v, spec, Rng(0)), DataError);
  spec.grid = 2;
  spec.jitter = 0;
  spec.patch_len = 9;
  EXPECT_THROW(create_puzzles(v, spec, Rng(0)), DataError);
}

TEST(CreatePuzzles, BlankSlicesAreSkipped) {
  auto v = noise_volume(2, {4, 32, 32}, 11);
  for (std::size_t m = 0; m < 2; ++m)
    for (auto& x : v.slice(m, 2)) x = 0.0f;
  PuzzleSpec spec;
  spec.grid = 2;
  const auto pz = create_puzzles(v, spec, Rng(8));
  EXPECT_EQ(pz.size(), 3u);
  for (const auto& p : pz) EXPECT_NE(p.slice, 2u);
  spec.foreground_threshold = 0.0;
  EXPECT_EQ(create_puzzles(v, spec, Rng(8)).size(), 4u);
}

TEST(CreatePuzzles, PatchLengthDefaultsFromGeometry) {
  const auto v = noise_volume(1, {1, 64, 64}, 12);
  PuzzleSpec spec;
  spec.grid = 3;
  spec.jitter = 5;
  const auto pz = create_puzzles(v, spec, Rng(0));
  ASSERT_EQ(pz.size(), 1u);
  EXPECT_EQ(pz[0].patch_len(), 64u / 3 - 10);
}

TEST(SolutionSpace, Values) {
  EXPECT_EQ(solution_space(9, 1), 362880);
  EXPECT_EQ(solution_space(4, 2), 576);
  EXPECT_EQ(solution_space(1, 5), 1);
  // 25!^2 needs arbitrary precision.
  boost::multiprecision::cpp_int f25 = 1;
  for (int i = 2; i <= 25; ++i) f25 *= i;
  EXPECT_EQ(solution_space(25, 2), f25 * f25);
  EXPECT_THROW(solution_space(0, 1), DataError);
}

TEST(Synth, SingleModalityDataset) {
  const auto cases = synth_dataset(2, {32, 32, 32}, 1, Rng(1));
  ASSERT_EQ(cases.size(), 2u);
  for (const auto& c : cases) {
    EXPECT_EQ(c.volume.modalities(), 1u);
    EXPECT_EQ(c.mask.dims, c.volume.dims());
  }
}

TEST(Synth, FixedSeedIsReproducible) {
  const auto a = synth_dataset(2, {32, 32, 32}, 2, Rng(3));
  const auto b = synth_dataset(2, {32, 32, 32}, 2, Rng(3));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(a[i].volume == b[i].volume);
    EXPECT_TRUE(a[i].mask == b[i].mask);
  }
  EXPECT_FALSE(synth_dataset(1, {32, 32, 32}, 2, Rng(4))[0].volume == a[0].volume);
}

TEST(Synth, RejectsSmallDims) {
  EXPECT_THROW(synth_dataset(1, {16, 32, 32}, 2, Rng(0)), DataError);
}

TEST(Synth, ModalitiesAreComplementary) {
  const auto t = synth_transfer_table(2);
  const auto pairs01 = complementary_pairs(t, 0, 1);
  EXPECT_FALSE(pairs01.empty());
  // Each modality hides some pair the other separates.
  EXPECT_FALSE(complementary_pairs(t, 1, 0).empty());
  // The generated volumes carry those classes with the tabulated contrast.
  const auto cases = synth_dataset(2, {32, 32, 32}, 2, Rng(5));
  for (const auto& c : cases) {
    for (const auto& [a, b] : pairs01) {
      std::vector<double> mean(2, 0.0), count(2, 0.0);
      for (std::size_t i = 0; i < c.mask.labels.size(); ++i) {
        const auto lbl = c.mask.labels[i];
        if (lbl != a && lbl != b) continue;
        const int k = lbl == a ? 0 : 1;
        mean[k] += c.volume.modality(1)[i];
        count[k] += 1;
      }
      if (count[0] == 0 || count[1] == 0) continue;
      EXPECT_GT(std::abs(mean[0] / count[0] - mean[1] / count[1]), 5 * t.noise_sigma * 0.5);
    }
  }
}

TEST(Synth, ValuesInUnitRangeAndLabelsValid) {
  for (const auto& c : synth_dataset(2, {32, 40, 36}, 3, Rng(6))) {
    for (float x : c.volume.data()) {
      EXPECT_GE(x, 0.0f);
      EXPECT_LE(x, 1.0f);
    }
    EXPECT_EQ(c.mask.classes, kSynthClasses);
    for (auto l : c.mask.labels) EXPECT_LT(l, kSynthClasses);
    std::set<int> present(c.mask.labels.begin(), c.mask.labels.end());
    EXPECT_EQ(present.size(), static_cast<std::size_t>(kSynthClasses));
  }
}

TEST(Synth, SyntheticModalityProvenanceReachesPuzzles) {
  auto v = synth_dataset(1, {32, 32, 32}, 2, Rng(7))[0].volume;
  v.set_synthetic(1, true);
  PuzzleSpec spec;
  spec.grid = 2;
  bool real = false, fake = false;
  for (const auto& pz : create_puzzles(v, spec, Rng(1)))
    for (std::size_t i = 0; i < pz.n(); ++i) {
      EXPECT_EQ(pz.source_synthetic[i], pz.source_modalities[i] == 1 ? 1 : 0);
      (pz.source_synthetic[i] ? fake : real) = true;
    }
  EXPECT_TRUE(real);
  EXPECT_TRUE(fake);
}
