#pragma once

// Sinkhorn operator with an exact reverse pass through every unrolled
// iteration.
//
//   S^0 = exp((X - rowmax(X)) / tau)
//   S^i = T_R(T_C(S^{i-1}))          T_C: divide by column sums
//                                    T_R: divide by row sums
//
// The row-max shift changes intermediate iterates but not the limit, and it
// is differentiated through like any other op.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/permute/permutation.hpp"

namespace mmjigsaw {

struct SinkhornTrace {
  std::size_t n = 0;
  double temperature = 1.0;
  std::vector<std::size_t> row_argmax;
  std::vector<double> initial;                 // S^0
  std::vector<std::vector<double>> after_col;  // T_C(S^{i-1})
  std::vector<std::vector<double>> col_sums;
  std::vector<std::vector<double>> after_row;  // S^i
  std::vector<std::vector<double>> row_sums;
};

inline DoublyStochasticMatrix sinkhorn(const SquareScoreMatrix& x, int iterations,
                                       double temperature, SinkhornTrace* trace = nullptr) {
  if (iterations < 1) throw NumericError("sinkhorn: iterations must be >= 1");
  if (!(temperature > 0.0)) throw NumericError("sinkhorn: temperature must be > 0");
  const std::size_t n = x.n();
  if (!x.all_finite()) throw NumericError("sinkhorn: score matrix has non-finite entries");

  std::vector<double> s(n * n);
  std::vector<std::size_t> argmax(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < n; ++j) {
      if (x(i, j) > x(i, argmax[i])) argmax[i] = j;
    }
    const double m = x(i, argmax[i]);
    for (std::size_t j = 0; j < n; ++j) {
      const double z = (x(i, j) - m) / temperature;
      if (!std::isfinite(z)) {
        throw NumericError("sinkhorn: exp argument overflowed at temperature " +
                           std::to_string(temperature) + "; use a larger temperature");
      }
      s[i * n + j] = std::exp(z);
    }
  }
  if (trace) {
    *trace = SinkhornTrace{};
    trace->n = n;
    trace->temperature = temperature;
    trace->row_argmax = argmax;
    trace->initial = s;
  }

  std::vector<double> sums(n);
  for (int it = 0; it < iterations; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) sums[j] += s[i * n + j];
    for (std::size_t j = 0; j < n; ++j) {
      if (!(sums[j] > 0.0) || !std::isfinite(sums[j])) {
        throw NumericError("sinkhorn: column " + std::to_string(j) +
                           " underflowed to zero; use a larger temperature");
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s[i * n + j] /= sums[j];
    if (trace) {
      trace->col_sums.push_back(sums);
      trace->after_col.push_back(s);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < n; ++j) r += s[i * n + j];
      sums[i] = r;
      for (std::size_t j = 0; j < n; ++j) s[i * n + j] /= r;
    }
    if (trace) {
      trace->row_sums.push_back(sums);
      trace->after_row.push_back(s);
    }
  }
  return DoublyStochasticMatrix(SquareMatrix(n, std::move(s)));
}

// Gradient w.r.t. the score matrix given d(loss)/d(S).
inline SquareMatrix sinkhorn_backward(const SinkhornTrace& trace, const SquareMatrix& grad_s) {
  const std::size_t n = trace.n;
  if (grad_s.n() != n) throw DimensionError("sinkhorn_backward: gradient side mismatch");
  std::vector<double> g(grad_s.values().begin(), grad_s.values().end());
  std::vector<double> tmp(n * n);
  for (std::size_t it = trace.after_row.size(); it-- > 0;) {
    const auto& c_out = trace.after_row[it];
    const auto& r = trace.row_sums[it];
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * c_out[i * n + j];
      for (std::size_t j = 0; j < n; ++j) tmp[i * n + j] = (g[i * n + j] - dot) / r[i];
    }
    const auto& b_out = trace.after_col[it];
    const auto& c = trace.col_sums[it];
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += tmp[i * n + j] * b_out[i * n + j];
      for (std::size_t i = 0; i < n; ++i) g[i * n + j] = (tmp[i * n + j] - dot) / c[j];
    }
  }
  SquareMatrix gx(n);
  const double inv_t = 1.0 / trace.temperature;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double gz = g[i * n + j] * trace.initial[i * n + j] * inv_t;
      gx(i, j) = gz;
      row += gz;
    }
    gx(i, trace.row_argmax[i]) -= row;
  }
  return gx;
}

}  // namespace mmjigsaw
