#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/tensor.hpp"
#include "mmjigsaw/permute/permutation.hpp"

namespace mmjigsaw {

// Permutation maximising sum_i m(i, sigma(i)).
//
// Shortest-augmenting-path Hungarian method, O(n^3). Rows are inserted in
// index order and the scan over columns keeps the lowest index among equal
// reduced costs, so exact ties resolve toward the lowest-index assignment
// (a uniform matrix decodes to the identity).
inline Permutation max_weight_assignment(const SquareMatrix& m) {
  const std::size_t n = m.n();
  if (n == 0) return Permutation{};
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -m(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> mapping(n);
  for (std::size_t j = 1; j <= n; ++j) mapping[match[j] - 1] = j - 1;
  return Permutation(std::move(mapping));
}

inline Permutation hard_decode(const DoublyStochasticMatrix& s) {
  return max_weight_assignment(s.matrix());
}

// Reconstruction P_rec = S^T P: output patch j = sum_i s(i, j) * patch i.
// `patches` is [N, ...]; each patch is treated as a flattened row.
template <class T>
BasicTensor<T> apply_soft(const DoublyStochasticMatrix& s, const BasicTensor<T>& patches) {
  const std::size_t n = s.n();
  if (patches.rank() == 0 || patches.dim(0) != n) {
    throw DimensionError("apply_soft: matrix side " + std::to_string(n) + " but patch stack " +
                         shape_str(patches.shape()));
  }
  const std::size_t len = patches.size() / n;
  BasicTensor<T> out(patches.shape());
  std::vector<double> acc(len);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = s(i, j);
      if (w == 0.0) continue;
      const T* p = patches.data().data() + i * len;
      for (std::size_t k = 0; k < len; ++k) acc[k] += w * static_cast<double>(p[k]);
    }
    T* o = out.data().data() + j * len;
    for (std::size_t k = 0; k < len; ++k) o[k] = static_cast<T>(acc[k]);
  }
  return out;
}

// d(loss)/d(s) given d(loss)/d(P_rec): g(i, j) = <grad_out_j, patch_i>.
template <class T>
SquareMatrix apply_soft_backward(const BasicTensor<T>& patches, const BasicTensor<double>& grad_out) {
  const std::size_t n = patches.dim(0);
  const std::size_t len = patches.size() / n;
  SquareMatrix g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = patches.data().data() + i * len;
    for (std::size_t j = 0; j < n; ++j) {
      const double* go = grad_out.data().data() + j * len;
      double d = 0.0;
      for (std::size_t k = 0; k < len; ++k) d += go[k] * static_cast<double>(p[k]);
      g(i, j) = d;
    }
  }
  return g;
}

}  // namespace mmjigsaw
