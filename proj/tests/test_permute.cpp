#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mmjigsaw/core/gradcheck.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/permute/assignment.hpp"
#include "mmjigsaw/permute/permutation.hpp"
#include "mmjigsaw/permute/sinkhorn.hpp"

using namespace mmjigsaw;

namespace {

SquareMatrix random_matrix(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  SquareMatrix m(n);
  for (auto& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

// Exhaustive maximum of sum_i m(i, sigma(i)); first maximum in lexicographic
// order wins, and `unique` reports whether it beats the runner-up by more
// than `margin`.
std::vector<std::size_t> brute_force(const SquareMatrix& m, bool* unique = nullptr, double margin = 1e-9) {
  std::vector<std::size_t> p(m.n()), best;
  std::iota(p.begin(), p.end(), std::size_t{0});
  double best_v = -1e300, second = -1e300;
  do {
    double v = 0.0;
    for (std::size_t i = 0; i < m.n(); ++i) v += m(i, p[i]);
    if (v > best_v) {
      second = best_v;
      best_v = v;
      best = p;
    } else if (v > second) {
      second = v;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  if (unique) *unique = best_v - second > margin;
  return best;
}

// Eq. 1 written out directly for n = 2, iterated to a fixed point.
SquareMatrix reference_sinkhorn(const SquareMatrix& x, double tol) {
  double a = std::exp(x(0, 0)), b = std::exp(x(0, 1)), c = std::exp(x(1, 0)), d = std::exp(x(1, 1));
  for (int it = 0; it < 100000; ++it) {
    const double c0 = a + c, c1 = b + d;
    a /= c0, c /= c0, b /= c1, d /= c1;
    const double r0 = a + b, r1 = c + d;
    const double pa = a;
    a /= r0, b /= r0, c /= r1, d /= r1;
    if (std::abs(a - pa) < tol && std::abs(a + c - 1.0) < tol) break;
  }
  return SquareMatrix::from_rows({{a, b}, {c, d}});
}

}  // namespace

TEST(Sinkhorn, OneByOneIsOne) {
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const auto s = sinkhorn(SquareMatrix(1, {rng.uniform(-10, 10)}), 3, 1.0);
    EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  }
}

TEST(Sinkhorn, ZerosGiveUniform) {
  for (int iters : {1, 5, 20}) {
    const auto s = sinkhorn(SquareMatrix(3), iters, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s(i, j), 1.0 / 3.0, 1e-15);
  }
}

TEST(Sinkhorn, TwoByTwoMatchesFixedPoint) {
  const auto x = SquareMatrix::from_rows({{1, 0}, {0, 1}});
  const auto s = sinkhorn(x, 100, 1.0);
  const auto ref = reference_sinkhorn(x, 1e-12);
  const double a = ref(0, 0);
  EXPECT_NEAR(s(0, 0), a, 1e-10);
  EXPECT_NEAR(s(1, 1), a, 1e-10);
  EXPECT_NEAR(s(0, 1), 1 - a, 1e-10);
  EXPECT_NEAR(s(1, 0), 1 - a, 1e-10);
  // Fixed point of the 2x2 symmetric case: a/(1-a) = e.
  EXPECT_NEAR(a, std::exp(1.0) / (1.0 + std::exp(1.0)), 1e-10);
}

TEST(Sinkhorn, RejectsBadArguments) {
  EXPECT_THROW(sinkhorn(SquareMatrix(2), 0, 1.0), NumericError);
  EXPECT_THROW(sinkhorn(SquareMatrix(2), 1, 0.0), NumericError);
  SquareMatrix bad(2);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(sinkhorn(bad, 1, 1.0), NumericError);
}

TEST(Sinkhorn, TinyTemperatureUnderflowSuggestsLargerTemperature) {
  const auto x = SquareMatrix::from_rows({{100, 0}, {100, 0}});
  try {
    sinkhorn(x, 5, 1e-3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("temperature"), std::string::npos);
  }
}

TEST(Sinkhorn, RandomInputsAreDoublyStochastic) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 6;
    const auto s = sinkhorn(random_matrix(n, rng), 50, 1.0);
    EXPECT_LT(s.marginal_error(), 1e-6);
    for (double v : s.matrix().values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Sinkhorn, SharpeningRecoversClearOptimum) {
  Rng rng(3);
  int checked = 0;
  while (checked < 50) {
    SquareMatrix x(5);
    for (auto& v : x.values()) v = rng.normal();
    bool unique = false;
    const auto best = brute_force(x, &unique, 0.1);
    if (!unique) continue;
    ++checked;
    // Small temperatures converge slowly, hence the longer unroll.
    double prev = 0.0;
    for (double tau : {0.1, 0.05, 0.02, 0.01}) {
      const auto s = sinkhorn(x, 500, tau);
      EXPECT_EQ(hard_decode(s).mapping(), best) << "tau=" << tau;
      double row_min = 1.0;
      for (std::size_t i = 0; i < 5; ++i) row_min = std::min(row_min, s(i, best[i]));
      EXPECT_GT(row_min, prev - 1e-3);
      prev = row_min;
    }
    EXPECT_GT(prev, 0.9);
  }
}

TEST(Sinkhorn, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (std::size_t n = 2; n <= 5; ++n) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto x = random_matrix(n, rng);
      const auto probe = random_matrix(n, rng);
      auto loss = [&](const SquareMatrix& m) {
        const auto s = sinkhorn(m, 10, 0.7);
        double v = 0.0;
        for (std::size_t i = 0; i < n * n; ++i) v += s.matrix().values()[i] * probe.values()[i];
        return v;
      };
      SinkhornTrace tr;
      sinkhorn(x, 10, 0.7, &tr);
      const auto g = sinkhorn_backward(tr, probe);
      double worst = 0.0;
      for (std::size_t k = 0; k < n * n; ++k) {
        SquareMatrix xp = x, xm = x;
        xp.values()[k] += 1e-5;
        xm.values()[k] -= 1e-5;
        const double num = (loss(xp) - loss(xm)) / 2e-5;
        worst = std::max(worst, std::abs(num - g.values()[k]) / std::max({std::abs(num), std::abs(g.values()[k]), 1e-6}));
      }
      EXPECT_LT(worst, 1e-4) << "n=" << n;
    }
  }
}

TEST(HardDecode, DominantDiagonal) {
  const auto s = DoublyStochasticMatrix(SquareMatrix::from_rows({{0.9, 0.1}, {0.1, 0.9}}));
  EXPECT_EQ(hard_decode(s), Permutation::identity(2));
}

TEST(HardDecode, GlobalNotGreedy) {
  const auto m = SquareMatrix::from_rows({{0.6, 0.4}, {0.55, 0.45}});
  EXPECT_EQ(hard_decode(DoublyStochasticMatrix(m)).mapping(), brute_force(m));
  EXPECT_EQ(hard_decode(DoublyStochasticMatrix(m)), Permutation::identity(2));
}

TEST(HardDecode, UniformTiesBreakToIdentity) {
  for (std::size_t n = 1; n <= 7; ++n) {
    const auto s = DoublyStochasticMatrix(SquareMatrix(n, 1.0 / static_cast<double>(n)));
    EXPECT_EQ(hard_decode(s), Permutation::identity(n));
  }
}

TEST(HardDecode, MatchesExhaustiveSearch) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 5;
    const auto s = sinkhorn(random_matrix(n, rng), 20, 1.0);
    const auto best = brute_force(s.matrix());
    const auto got = hard_decode(s);
    double vb = 0, vg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      vb += s(i, best[i]);
      vg += s(i, got[i]);
    }
    EXPECT_NEAR(vg, vb, 1e-12);
  }
}

TEST(ApplySoft, IdentityKeepsStack) {
  Rng rng(6);
  Tensor p({3, 2, 2});
  for (auto& v : p.data()) v = static_cast<float>(rng.uniform());
  EXPECT_TRUE(apply_soft(perm_to_matrix(Permutation::identity(3)), p) == p);
}

TEST(ApplySoft, SwapExchangesPatches) {
  Tensor p({2, 1, 2}, {1, 2, 3, 4});
  const auto out = apply_soft(perm_to_matrix(Permutation({1, 0})), p);
  EXPECT_EQ(out[0], 3);
  EXPECT_EQ(out[1], 4);
  EXPECT_EQ(out[2], 1);
  EXPECT_EQ(out[3], 2);
}

TEST(ApplySoft, UniformGivesMean) {
  Tensor p({2, 1, 2}, {1, 2, 3, 6});
  const auto out = apply_soft(DoublyStochasticMatrix(SquareMatrix(2, 0.5)), p);
  EXPECT_FLOAT_EQ(out[0], 2);
  EXPECT_FLOAT_EQ(out[1], 4);
  EXPECT_FLOAT_EQ(out[2], 2);
  EXPECT_FLOAT_EQ(out[3], 4);
}

TEST(ApplySoft, DimensionMismatch) {
  EXPECT_THROW(apply_soft(perm_to_matrix(Permutation::identity(3)), Tensor({2, 2, 2})), DimensionError);
}

TEST(ApplySoft, PermutationMatrixEqualsIndexRearrangement) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 7;
    const auto sigma = Permutation::random(n, rng);
    Tensor p({n, 3, 3});
    for (auto& v : p.data()) v = static_cast<float>(rng.uniform());
    const auto out = apply_soft(perm_to_matrix(sigma), p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 9; ++k) EXPECT_EQ(out[sigma[i] * 9 + k], p[i * 9 + k]);
  }
}

TEST(PermToMatrix, IdentityAndSwap) {
  const auto id = perm_to_matrix(Permutation::identity(3));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(id(i, j), i == j ? 1.0 : 0.0);
  const auto sw = perm_to_matrix(Permutation({1, 0}));
  EXPECT_EQ(sw.matrix(), SquareMatrix::from_rows({{0, 1}, {1, 0}}));
}

TEST(PermToMatrix, RoundTripsThroughHardDecode) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = Permutation::random(6, rng);
    EXPECT_EQ(hard_decode(perm_to_matrix(p)), p);
    EXPECT_TRUE(perm_to_matrix(p).is_doubly_stochastic(0.0));
  }
}

TEST(Permutation, RejectsNonBijection) {
  EXPECT_THROW(Permutation({0, 0}), DataError);
  EXPECT_THROW(Permutation({0, 2}), DataError);
}

TEST(Permutation, InverseAndComposition) {
  Rng rng(9);
  const auto p = Permutation::random(7, rng);
  EXPECT_EQ(p.then(p.inverse()), Permutation::identity(7));
  EXPECT_EQ(p.inverse().then(p), Permutation::identity(7));
}
