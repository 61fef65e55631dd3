#pragma once

// Differentiable building blocks. Every forward op has a matching backward
// that *accumulates* into caller-owned gradient tensors, so a network's
// backward pass is the forward graph unrolled in reverse.
//
// Layouts: feature maps are [C, H, W]; convolution kernels are
// [out, in, kh, kw]; dense weights are [out, in].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Core>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/tensor.hpp"

namespace mmjigsaw {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

struct ConvGeometry {
  std::size_t c, h, w, o, kh, kw, stride, pad, ho, wo;
};

template <class T>
ConvGeometry conv_geometry(const BasicTensor<T>& in, const BasicTensor<T>& kernel,
                           std::size_t stride, std::size_t pad) {
  if (in.rank() != 3) {
    throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(in.shape()));
  }
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d: kernel must be [O,C,kh,kw], got " + shape_str(kernel.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{in.dim(0), in.dim(1), in.dim(2), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                 stride, pad, 0, 0};
  if (kernel.dim(1) != g.c) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(g.c));
  }
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " exceeds padded input " + std::to_string(g.h + 2 * pad) + "x" +
                         std::to_string(g.w + 2 * pad));
  }
  g.ho = conv_out_extent(g.h, g.kh, stride, pad);
  g.wo = conv_out_extent(g.w, g.kw, stride, pad);
  return g;
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Visits every in-bounds tap as f(col_row, col_col, input_index) where the
// column matrix is [C*kh*kw, Ho*Wo].
template <class F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  const std::size_t np = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const std::size_t r = (c * g.kh + ky) * g.kw + kx;
        for (std::size_t y = 0; y < g.ho; ++y) {
          const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const std::size_t base = (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t x = 0; x < g.wo; ++x) {
            const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            f(r * np + y * g.wo + x, base + static_cast<std::size_t>(ix));
          }
        }
      }
}

// Column matrix [C*kh*kw, Ho*Wo]; out-of-bounds taps are zero.
template <class T>
RowMatrix<T> im2col(const BasicTensor<T>& in, const ConvGeometry& g) {
  RowMatrix<T> col = RowMatrix<T>::Zero(static_cast<Eigen::Index>(g.c * g.kh * g.kw),
                                        static_cast<Eigen::Index>(g.ho * g.wo));
  const T* ip = in.data().data();
  T* cp = col.data();
  for_each_tap(g, [&](std::size_t ci, std::size_t ii) { cp[ci] = ip[ii]; });
  return col;
}

template <class T>
auto as_matrix(const BasicTensor<T>& t, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMatrix<T>>(t.data().data(), static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(cols));
}

template <class T>
auto as_matrix(BasicTensor<T>& t, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMatrix<T>>(t.data().data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));
}

}  // namespace detail

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& in, const BasicTensor<T>& kernel, std::size_t stride,
                      std::size_t pad) {
  const auto g = detail::conv_geometry(in, kernel, stride, pad);
  const std::size_t ck = g.c * g.kh * g.kw, np = g.ho * g.wo;
  const auto col = detail::im2col(in, g);
  BasicTensor<T> out({g.o, g.ho, g.wo});
  detail::as_matrix(out, g.o, np).noalias() = detail::as_matrix(kernel, g.o, ck) * col;
  return out;
}

// Accumulates d(out)/d(in) and d(out)/d(kernel) contracted with grad_out.
// Either gradient pointer may be null.
template <class T>
void conv2d_backward(const BasicTensor<T>& in, const BasicTensor<T>& kernel,
                     const BasicTensor<T>& grad_out, std::size_t stride, std::size_t pad,
                     BasicTensor<T>* grad_in, BasicTensor<T>* grad_kernel) {
  const auto g = detail::conv_geometry(in, kernel, stride, pad);
  if (grad_out.shape() != Shape{g.o, g.ho, g.wo}) {
    throw DimensionError("conv2d_backward: grad_out " + shape_str(grad_out.shape()) +
                         " does not match output " + shape_str({g.o, g.ho, g.wo}));
  }
  if (grad_in) in.require_same_shape(*grad_in, "conv2d_backward grad_in");
  if (grad_kernel) kernel.require_same_shape(*grad_kernel, "conv2d_backward grad_kernel");
  const std::size_t ck = g.c * g.kh * g.kw, np = g.ho * g.wo;
  const auto go = detail::as_matrix(grad_out, g.o, np);

  if (grad_kernel) {
    const auto col = detail::im2col(in, g);
    detail::as_matrix(*grad_kernel, g.o, ck).noalias() += go * col.transpose();
  }

  if (grad_in) {
    const detail::RowMatrix<T> gcol = detail::as_matrix(kernel, g.o, ck).transpose() * go;
    const T* cp = gcol.data();
    T* gi = grad_in->data().data();
    detail::for_each_tap(g, [&](std::size_t ci, std::size_t ii) { gi[ii] += cp[ci]; });
  }
}

// Adds bias[c] to every element of channel c (any trailing extents).
template <class T>
void add_channel_bias(BasicTensor<T>& t, const BasicTensor<T>& bias) {
  const std::size_t c = t.dim(0);
  if (bias.size() != c) {
    throw DimensionError("bias has " + std::to_string(bias.size()) + " entries for " +
                         std::to_string(c) + " channels");
  }
  const std::size_t plane = t.size() / c;
  for (std::size_t i = 0; i < c; ++i) {
    T* p = t.data().data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) p[j] += bias[i];
  }
}

template <class T>
void channel_bias_backward(const BasicTensor<T>& grad_out, BasicTensor<T>& grad_bias) {
  const std::size_t c = grad_out.dim(0);
  const std::size_t plane = grad_out.size() / c;
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    const T* p = grad_out.data().data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += static_cast<double>(p[j]);
    grad_bias[i] += static_cast<T>(s);
  }
}

// y = W x + b with W [out, in]; x may have any shape holding `in` values.
template <class T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias) {
  if (weights.rank() != 2) {
    throw DimensionError("dense: weights must be [out,in], got " + shape_str(weights.shape()));
  }
  const std::size_t out = weights.dim(0), in = weights.dim(1);
  if (x.size() != in) {
    throw DimensionError("dense: weights expect " + std::to_string(in) + " inputs, got " +
                         std::to_string(x.size()));
  }
  if (bias.size() != out) {
    throw DimensionError("dense: bias has " + std::to_string(bias.size()) + " entries, need " +
                         std::to_string(out));
  }
  BasicTensor<T> y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double s = static_cast<double>(bias[o]);
    const T* w = weights.data().data() + o * in;
    for (std::size_t i = 0; i < in; ++i) s += static_cast<double>(w[i]) * static_cast<double>(x[i]);
    y[o] = static_cast<T>(s);
  }
  return y;
}

template <class T>
void dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                    const BasicTensor<T>& grad_out, BasicTensor<T>* grad_x,
                    BasicTensor<T>* grad_weights, BasicTensor<T>* grad_bias) {
  const std::size_t out = weights.dim(0), in = weights.dim(1);
  if (grad_out.size() != out || x.size() != in) {
    throw DimensionError("dense_backward: extent mismatch");
  }
  for (std::size_t o = 0; o < out; ++o) {
    const T g = grad_out[o];
    if (grad_bias) (*grad_bias)[o] += g;
    const T* w = weights.data().data() + o * in;
    if (grad_weights) {
      T* gw = grad_weights->data().data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gw[i] += g * x[i];
    }
    if (grad_x) {
      for (std::size_t i = 0; i < in; ++i) (*grad_x)[i] += g * w[i];
    }
  }
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  return y;
}

// `y` is the forward output; the mask y > 0 equals x > 0.
template <class T>
void relu_backward(const BasicTensor<T>& y, BasicTensor<T>& grad) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > T{0})) grad[i] = T{0};
  }
}

template <class T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
  BasicTensor<T> y = x;
  for (auto& v : y.data()) v = v > T{0} ? v : slope * v;
  return y;
}

template <class T>
void leaky_relu_backward(const BasicTensor<T>& y, T slope, BasicTensor<T>& grad) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > T{0})) grad[i] *= slope;
  }
}

// [C,H,W] -> [C]
template <class T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  const std::size_t c = x.dim(0), plane = x.size() / x.dim(0);
  BasicTensor<T> y({c});
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    const T* p = x.data().data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += static_cast<double>(p[j]);
    y[i] = static_cast<T>(s / static_cast<double>(plane));
  }
  return y;
}

template <class T>
BasicTensor<T> global_avg_pool_backward(const Shape& in_shape, const BasicTensor<T>& grad_out) {
  BasicTensor<T> g(in_shape);
  const std::size_t c = in_shape[0], plane = g.size() / c;
  const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
  for (std::size_t i = 0; i < c; ++i) {
    T* p = g.data().data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) p[j] = grad_out[i] * inv;
  }
  return g;
}

// Nearest-neighbour upsampling of [C,H,W] to [C,h_out,w_out], source index
// floor(dst * in / out).
template <class T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, std::size_t h_out, std::size_t w_out) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  BasicTensor<T> y({c, h_out, w_out});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h_out; ++i) {
      const std::size_t si = i * h / h_out;
      for (std::size_t j = 0; j < w_out; ++j) y.at(ch, i, j) = x.at(ch, si, j * w / w_out);
    }
  return y;
}

template <class T>
BasicTensor<T> upsample_nearest_backward(const Shape& in_shape, const BasicTensor<T>& grad_out) {
  BasicTensor<T> g(in_shape);
  const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
  const std::size_t h_out = grad_out.dim(1), w_out = grad_out.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h_out; ++i) {
      const std::size_t si = i * h / h_out;
      for (std::size_t j = 0; j < w_out; ++j) g.at(ch, si, j * w / w_out) += grad_out.at(ch, i, j);
    }
  return g;
}

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels: spatial extents " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  BasicTensor<T> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data().begin(), a.data().end(), y.data().begin());
  std::copy(b.data().begin(), b.data().end(), y.data().begin() + static_cast<long>(a.size()));
  return y;
}

// Splits a concat gradient back into the two operands' gradients.
template <class T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& g, std::size_t first) {
  const std::size_t h = g.dim(1), w = g.dim(2);
  BasicTensor<T> a({first, h, w}), b({g.dim(0) - first, h, w});
  std::copy(g.data().begin(), g.data().begin() + static_cast<long>(a.size()), a.data().begin());
  std::copy(g.data().begin() + static_cast<long>(a.size()), g.data().end(), b.data().begin());
  return {std::move(a), std::move(b)};
}

// Bilinear resampling of [C,H,W] with half-pixel centres and edge clamping.
template <class T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& x, std::size_t h_out, std::size_t w_out) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == h_out && w == w_out) return x;
  BasicTensor<T> y({c, h_out, w_out});
  auto coord = [](std::size_t dst, std::size_t in, std::size_t out, std::size_t& i0,
                  std::size_t& i1, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    frac = s - static_cast<double>(i0);
  };
  for (std::size_t i = 0; i < h_out; ++i) {
    std::size_t y0, y1;
    double fy;
    coord(i, h, h_out, y0, y1, fy);
    for (std::size_t j = 0; j < w_out; ++j) {
      std::size_t x0, x1;
      double fx;
      coord(j, w, w_out, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1 - fx) * x.at(ch, y0, x0) + fx * x.at(ch, y0, x1);
        const double bot = (1 - fx) * x.at(ch, y1, x0) + fx * x.at(ch, y1, x1);
        y.at(ch, i, j) = static_cast<T>((1 - fy) * top + fy * bot);
      }
    }
  }
  return y;
}

// Per-sample normalisation over every element of x (no affine parameters):
// y = (x - mean) / sqrt(var + eps).
template <class T>
struct NormStats {
  double mean = 0.0;
  double inv_std = 1.0;
};

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, NormStats<T>& stats, double eps = 1e-5) {
  const double n = static_cast<double>(x.size());
  const double mean = sum(x) / n;
  double var = 0.0;
  for (T v : x.data()) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  var /= n;
  stats.mean = mean;
  stats.inv_std = 1.0 / std::sqrt(var + eps);
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = static_cast<T>((static_cast<double>(x[i]) - mean) * stats.inv_std);
  }
  return y;
}

// `y` is the forward output; returns d/dx.
template <class T>
BasicTensor<T> layer_norm_backward(const BasicTensor<T>& y, const NormStats<T>& stats,
                                   const BasicTensor<T>& grad_out) {
  const double n = static_cast<double>(y.size());
  double mg = 0.0, mgy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mg += static_cast<double>(grad_out[i]);
    mgy += static_cast<double>(grad_out[i]) * static_cast<double>(y[i]);
  }
  mg /= n;
  mgy /= n;
  BasicTensor<T> gx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    gx[i] = static_cast<T>(stats.inv_std *
                           (static_cast<double>(grad_out[i]) - mg - static_cast<double>(y[i]) * mgy));
  }
  return gx;
}

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace mmjigsaw
