#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/rng.hpp"

namespace mmjigsaw {

// n x n real matrix, row-major, double precision.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), v_(n * n, fill) {}
  SquareMatrix(std::size_t n, std::vector<double> values) : n_(n), v_(std::move(values)) {
    if (v_.size() != n * n) {
      throw DimensionError("square matrix of side " + std::to_string(n) + " needs " +
                           std::to_string(n * n) + " entries, got " + std::to_string(v_.size()));
    }
  }
  static SquareMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    SquareMatrix m(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != n) throw DimensionError("matrix is not square");
      std::copy(rows[i].begin(), rows[i].end(), m.v_.begin() + static_cast<long>(i * n));
    }
    return m;
  }

  std::size_t n() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return v_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  std::span<double> values() { return v_; }
  std::span<const double> values() const { return v_; }

  bool all_finite() const {
    return std::all_of(v_.begin(), v_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

// Raw network scores, one row per patch.
using SquareScoreMatrix = SquareMatrix;

// Non-negative matrix produced by Sinkhorn normalisation (or an exact
// permutation matrix). Marginals are checked on demand, not at construction,
// because intermediate iterates are only approximately balanced.
class DoublyStochasticMatrix {
 public:
  DoublyStochasticMatrix() = default;
  explicit DoublyStochasticMatrix(SquareMatrix m) : m_(std::move(m)) {
    for (double x : m_.values()) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw NumericError("doubly stochastic matrix has a negative or non-finite entry");
      }
    }
  }

  std::size_t n() const { return m_.n(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const SquareMatrix& matrix() const { return m_; }

  // Largest |row sum - 1| or |column sum - 1|.
  double marginal_error() const {
    const std::size_t n = m_.n();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0, c = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        r += m_(i, j);
        c += m_(j, i);
      }
      worst = std::max({worst, std::abs(r - 1.0), std::abs(c - 1.0)});
    }
    return worst;
  }

  bool is_doubly_stochastic(double tol = 1e-6) const { return marginal_error() <= tol; }

 private:
  SquareMatrix m_;
};

// mapping[i] is the destination index of element i.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> mapping) : map_(std::move(mapping)) {
    std::vector<bool> seen(map_.size(), false);
    for (std::size_t d : map_) {
      if (d >= map_.size() || seen[d]) {
        throw DataError("permutation mapping is not a bijection on 0.." +
                        std::to_string(map_.size() == 0 ? 0 : map_.size() - 1));
      }
      seen[d] = true;
    }
  }

  static Permutation identity(std::size_t n) {
    std::vector<std::size_t> m(n);
    std::iota(m.begin(), m.end(), std::size_t{0});
    return Permutation(std::move(m));
  }

  static Permutation random(std::size_t n, Rng& rng) {
    std::vector<std::size_t> m(n);
    std::iota(m.begin(), m.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(m));
    return Permutation(std::move(m));
  }

  std::size_t n() const { return map_.size(); }
  std::size_t operator[](std::size_t i) const { return map_[i]; }
  const std::vector<std::size_t>& mapping() const { return map_; }

  Permutation inverse() const {
    std::vector<std::size_t> inv(map_.size());
    for (std::size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = i;
    return Permutation(std::move(inv));
  }

  // (this then other): i -> other[this[i]]
  Permutation then(const Permutation& other) const {
    if (other.n() != n()) throw DimensionError("composing permutations of different sizes");
    std::vector<std::size_t> m(map_.size());
    for (std::size_t i = 0; i < map_.size(); ++i) m[i] = other[map_[i]];
    return Permutation(std::move(m));
  }

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> map_;
};

inline DoublyStochasticMatrix perm_to_matrix(const Permutation& p) {
  SquareMatrix m(p.n());
  for (std::size_t i = 0; i < p.n(); ++i) m(i, p[i]) = 1.0;
  return DoublyStochasticMatrix(std::move(m));
}

}  // namespace mmjigsaw
