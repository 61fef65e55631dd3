#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/tensor.hpp"

namespace mmjigsaw {

struct Dims {
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t voxels() const { return depth * height * width; }
  std::size_t slice_pixels() const { return height * width; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string dims_str(const Dims& d) {
  return std::to_string(d.depth) + "x" + std::to_string(d.height) + "x" + std::to_string(d.width);
}

// M aligned scalar grids sharing one Dims. Storage is modality-major, then
// depth, height, width (the MMV on-disk order).
class MultimodalVolume {
 public:
  MultimodalVolume() = default;
  MultimodalVolume(std::size_t modalities, Dims dims)
      : modalities_(modalities), dims_(dims), data_(modalities * dims.voxels(), 0.0f),
        synthetic_(modalities, 0) {}
  MultimodalVolume(std::size_t modalities, Dims dims, std::vector<float> data)
      : modalities_(modalities), dims_(dims), data_(std::move(data)), synthetic_(modalities, 0) {
    if (data_.size() != modalities * dims.voxels()) {
      throw DimensionError("volume " + dims_str(dims) + " x " + std::to_string(modalities) +
                           " modalities needs " + std::to_string(modalities * dims.voxels()) +
                           " values, got " + std::to_string(data_.size()));
    }
  }

  std::size_t modalities() const { return modalities_; }
  const Dims& dims() const { return dims_; }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float& at(std::size_t m, std::size_t z, std::size_t y, std::size_t x) {
    return data_[((m * dims_.depth + z) * dims_.height + y) * dims_.width + x];
  }
  float at(std::size_t m, std::size_t z, std::size_t y, std::size_t x) const {
    return data_[((m * dims_.depth + z) * dims_.height + y) * dims_.width + x];
  }

  std::span<float> modality(std::size_t m) {
    return std::span<float>(data_).subspan(m * dims_.voxels(), dims_.voxels());
  }
  std::span<const float> modality(std::size_t m) const {
    return std::span<const float>(data_).subspan(m * dims_.voxels(), dims_.voxels());
  }
  std::span<const float> slice(std::size_t m, std::size_t z) const {
    return modality(m).subspan(z * dims_.slice_pixels(), dims_.slice_pixels());
  }
  std::span<float> slice(std::size_t m, std::size_t z) {
    return modality(m).subspan(z * dims_.slice_pixels(), dims_.slice_pixels());
  }

  // Axial slice z with modalities stacked as channels: [M, H, W].
  Tensor stacked_slice(std::size_t z) const {
    Tensor t({modalities_, dims_.height, dims_.width});
    for (std::size_t m = 0; m < modalities_; ++m) {
      auto s = slice(m, z);
      std::copy(s.begin(), s.end(), t.data().begin() + static_cast<long>(m * s.size()));
    }
    return t;
  }

  // Provenance: nonzero marks a modality produced by a translator.
  bool is_synthetic(std::size_t m) const { return synthetic_.at(m) != 0; }
  void set_synthetic(std::size_t m, bool flag) { synthetic_.at(m) = flag ? 1 : 0; }
  const std::vector<std::uint8_t>& synthetic_flags() const { return synthetic_; }
  bool any_synthetic() const {
    return std::any_of(synthetic_.begin(), synthetic_.end(), [](std::uint8_t f) { return f != 0; });
  }

  friend bool operator==(const MultimodalVolume&, const MultimodalVolume&) = default;

 private:
  std::size_t modalities_ = 0;
  Dims dims_;
  std::vector<float> data_;
  std::vector<std::uint8_t> synthetic_;
};

// Per-voxel class labels.
struct LabelVolume {
  Dims dims;
  std::uint8_t classes = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const {
    return labels[(z * dims.height + y) * dims.width + x];
  }
  std::span<const std::uint8_t> slice(std::size_t z) const {
    return std::span<const std::uint8_t>(labels).subspan(z * dims.slice_pixels(), dims.slice_pixels());
  }
  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

namespace detail {

// Half-pixel-centre source coordinate with edge clamping.
inline void linear_coord(std::size_t dst, std::size_t in, std::size_t out, std::size_t& i0,
                         std::size_t& i1, double& frac) {
  double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in - 1));
  i0 = static_cast<std::size_t>(std::floor(s));
  i1 = std::min(i0 + 1, in - 1);
  frac = s - static_cast<double>(i0);
}

}  // namespace detail

inline std::vector<float> resize_trilinear(std::span<const float> src, const Dims& from, const Dims& to) {
  std::vector<float> out(to.voxels());
  for (std::size_t z = 0; z < to.depth; ++z) {
    std::size_t z0, z1;
    double fz;
    detail::linear_coord(z, from.depth, to.depth, z0, z1, fz);
    for (std::size_t y = 0; y < to.height; ++y) {
      std::size_t y0, y1;
      double fy;
      detail::linear_coord(y, from.height, to.height, y0, y1, fy);
      for (std::size_t x = 0; x < to.width; ++x) {
        std::size_t x0, x1;
        double fx;
        detail::linear_coord(x, from.width, to.width, x0, x1, fx);
        auto v = [&](std::size_t zz, std::size_t yy, std::size_t xx) {
          return static_cast<double>(src[(zz * from.height + yy) * from.width + xx]);
        };
        const double c00 = (1 - fx) * v(z0, y0, x0) + fx * v(z0, y0, x1);
        const double c01 = (1 - fx) * v(z0, y1, x0) + fx * v(z0, y1, x1);
        const double c10 = (1 - fx) * v(z1, y0, x0) + fx * v(z1, y0, x1);
        const double c11 = (1 - fx) * v(z1, y1, x0) + fx * v(z1, y1, x1);
        const double c0 = (1 - fy) * c00 + fy * c01;
        const double c1 = (1 - fy) * c10 + fy * c11;
        out[(z * to.height + y) * to.width + x] = static_cast<float>((1 - fz) * c0 + fz * c1);
      }
    }
  }
  return out;
}

// Trilinear resize to `target`, then per-modality min-max scaling to [0, 1].
inline MultimodalVolume preprocess(const MultimodalVolume& raw, const Dims& target) {
  if (raw.modalities() == 0 || raw.dims().voxels() == 0) throw DataError("preprocess: empty volume");
  if (target.voxels() == 0) throw DataError("preprocess: empty target dims");
  MultimodalVolume out(raw.modalities(), target);
  for (std::size_t m = 0; m < raw.modalities(); ++m) {
    std::vector<float> r = raw.dims() == target
                               ? std::vector<float>(raw.modality(m).begin(), raw.modality(m).end())
                               : resize_trilinear(raw.modality(m), raw.dims(), target);
    const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    const double mn = *lo, mx = *hi;
    if (!std::isfinite(mn) || !std::isfinite(mx)) {
      throw DataError("preprocess: modality " + std::to_string(m) + " has non-finite intensities");
    }
    if (!(mx > mn)) {
      throw DataError("preprocess: modality " + std::to_string(m) +
                      " has constant intensity; min-max scaling is undefined");
    }
    auto dst = out.modality(m);
    for (std::size_t i = 0; i < r.size(); ++i) {
      dst[i] = static_cast<float>((static_cast<double>(r[i]) - mn) / (mx - mn));
    }
    out.set_synthetic(m, raw.is_synthetic(m));
  }
  return out;
}

}  // namespace mmjigsaw
