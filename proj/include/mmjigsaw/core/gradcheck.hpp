#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/tensor.hpp"

namespace mmjigsaw {

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Compares `analytic` (the gradient of scalar `f` at `point`) against central
// differences over every coordinate; returns the worst relative error.
template <class T>
double gradcheck(const std::function<double(const BasicTensor<T>&)>& f,
                 const BasicTensor<T>& analytic, const BasicTensor<T>& point, double h) {
  if (!(h > 0)) throw NumericError("gradcheck: step must be positive");
  point.require_same_shape(analytic, "gradcheck");
  BasicTensor<T> x = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x[i];
    x[i] = static_cast<T>(static_cast<double>(orig) + h);
    const double fp = f(x);
    x[i] = static_cast<T>(static_cast<double>(orig) - h);
    const double fm = f(x);
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, relative_error(numeric, static_cast<double>(analytic[i])));
  }
  return worst;
}

template <class T>
double gradcheck(const std::function<double(const BasicTensor<T>&)>& f,
                 const std::function<BasicTensor<T>(const BasicTensor<T>&)>& grad,
                 const BasicTensor<T>& point, double h) {
  return gradcheck<T>(f, grad(point), point, h);
}

}  // namespace mmjigsaw
