#pragma once

// Synthetic multimodal phantoms.
//
// Each volume is a "body" (class 1) on a zero background, with elongated
// bars (class 2) and small lesions (class 3) inside it. A modality renders
// classes through its own monotone intensity table, scaled by a smooth radial
// shading shared by all modalities, plus Gaussian noise inside the body. The default tables are complementary: classes 2/3
// are iso-intense in modality 0 and well separated in modality 1, while
// classes 1/2 are iso-intense in modality 1 and separated in modality 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/puzzle/volume.hpp"

namespace mmjigsaw {

inline constexpr std::uint8_t kSynthClasses = 4;

struct TransferTable {
  // intensity[modality][class]; class 0 (background) is always 0.
  std::vector<std::vector<double>> intensity;
  double noise_sigma = 0.03;
};

inline TransferTable synth_transfer_table(std::size_t modalities, double noise_sigma = 0.03) {
  TransferTable t;
  t.noise_sigma = noise_sigma;
  for (std::size_t k = 0; k < modalities; ++k) {
    if (k == 0) {
      t.intensity.push_back({0.0, 0.35, 0.75, 0.755});
    } else if (k == 1) {
      t.intensity.push_back({0.0, 0.60, 0.605, 0.95});
    } else {
      const double shift = 0.05 * static_cast<double>((k - 2) % 3);
      t.intensity.push_back({0.0, 0.25 + shift, 0.5 + shift, 0.8 + shift});
    }
  }
  return t;
}

// Class pairs (a, b), a < b, whose intensity gap is below sigma in modality
// `flat` but above `factor` * sigma in modality `sharp`.
inline std::vector<std::pair<std::uint8_t, std::uint8_t>> complementary_pairs(
    const TransferTable& t, std::size_t flat, std::size_t sharp, double factor = 5.0) {
  std::vector<std::pair<std::uint8_t, std::uint8_t>> out;
  if (flat >= t.intensity.size() || sharp >= t.intensity.size()) return out;
  const std::size_t classes = t.intensity[flat].size();
  for (std::size_t a = 1; a < classes; ++a)
    for (std::size_t b = a + 1; b < classes; ++b) {
      const double g0 = std::abs(t.intensity[flat][a] - t.intensity[flat][b]);
      const double g1 = std::abs(t.intensity[sharp][a] - t.intensity[sharp][b]);
      if (g0 < t.noise_sigma && g1 > factor * t.noise_sigma) {
        out.emplace_back(static_cast<std::uint8_t>(a), static_cast<std::uint8_t>(b));
      }
    }
  return out;
}

struct SynthCase {
  MultimodalVolume volume;
  LabelVolume mask;
};

struct SynthOptions {
  double noise_sigma = 0.03;
  std::size_t bars = 2;
  std::size_t lesions = 2;
  double shade_floor = 0.6;  // intensity scale at the body centre, rising to 1 at its rim
};

namespace detail {

struct Ellipsoid {
  double cz, cy, cx, rz, ry, rx;
  bool contains(double z, double y, double x) const {
    const double dz = (z - cz) / rz, dy = (y - cy) / ry, dx = (x - cx) / rx;
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

// Body: elliptic cross-section whose in-plane radius stays near full size
// over most of the depth (squared in-plane radius scale 1 - dz^4).
struct Body {
  Ellipsoid e;
  // Squared normalised in-plane radius, or a value > 1 outside.
  double radius2(double z, double y, double x) const {
    const double dz = (z - e.cz) / e.rz;
    const double scale = 1.0 - dz * dz * dz * dz;
    if (scale <= 0.0) return 2.0;
    const double dy = (y - e.cy) / e.ry, dx = (x - e.cx) / e.rx;
    return (dy * dy + dx * dx) / scale;
  }
};

inline SynthCase synth_case(const Dims& dims, std::size_t m, const TransferTable& table,
                            const SynthOptions& opt, Rng rng) {
  const double D = static_cast<double>(dims.depth), H = static_cast<double>(dims.height),
               W = static_cast<double>(dims.width);
  Body body{{D / 2 + rng.uniform(-0.03, 0.03) * D,
             H / 2 + rng.uniform(-0.03, 0.03) * H,
             W / 2 + rng.uniform(-0.03, 0.03) * W,
             rng.uniform(0.55, 0.62) * D,
             rng.uniform(0.47, 0.53) * H,
             rng.uniform(0.47, 0.53) * W}};
  auto inner_point = [&](double spread) {
    return std::array<double, 3>{body.e.cz + rng.uniform(-spread, spread) * body.e.rz,
                                 body.e.cy + rng.uniform(-spread, spread) * body.e.ry,
                                 body.e.cx + rng.uniform(-spread, spread) * body.e.rx};
  };
  std::vector<Ellipsoid> bars, lesions;
  for (std::size_t b = 0; b < opt.bars; ++b) {
    const auto c = inner_point(0.45);
    const bool along_x = rng.uniform() < 0.5;
    const double long_r = rng.uniform(0.35, 0.5), short_r = rng.uniform(0.06, 0.1);
    bars.push_back({c[0], c[1], c[2], rng.uniform(0.3, 0.45) * D,
                    (along_x ? short_r : long_r) * H, (along_x ? long_r : short_r) * W});
  }
  for (std::size_t l = 0; l < opt.lesions; ++l) {
    const auto c = inner_point(0.5);
    const double r = rng.uniform(0.08, 0.14);
    lesions.push_back({c[0], c[1], c[2], r * D * 1.5, r * H, r * W});
  }

  SynthCase out{MultimodalVolume(m, dims), LabelVolume{dims, kSynthClasses, {}}};
  out.mask.labels.assign(dims.voxels(), 0);
  std::vector<float> shade(dims.voxels(), 0.0f);
  for (std::size_t z = 0; z < dims.depth; ++z)
    for (std::size_t y = 0; y < dims.height; ++y)
      for (std::size_t x = 0; x < dims.width; ++x) {
        const double pz = static_cast<double>(z) + 0.5, py = static_cast<double>(y) + 0.5,
                     px = static_cast<double>(x) + 0.5;
        std::uint8_t cls = 0;
        const double r2 = body.radius2(pz, py, px);
        if (r2 <= 1.0) {
          cls = 1;
          shade[(z * dims.height + y) * dims.width + x] = static_cast<float>(opt.shade_floor + (1.0 - opt.shade_floor) * r2);
          for (const auto& e : bars)
            if (e.contains(pz, py, px)) cls = 2;
          for (const auto& e : lesions)
            if (e.contains(pz, py, px)) cls = 3;
        }
        out.mask.labels[(z * dims.height + y) * dims.width + x] = cls;
      }
  for (std::size_t k = 0; k < m; ++k) {
    Rng noise = rng.substream(100 + k);
    auto dst = out.volume.modality(k);
    for (std::size_t i = 0; i < dims.voxels(); ++i) {
      const std::uint8_t cls = out.mask.labels[i];
      if (cls == 0) continue;
      const double v = table.intensity[k][cls] * shade[i] + noise.normal(0.0, table.noise_sigma);
      dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace detail

// Volume i is generated from rng.substream(i), so cases are independent of
// how many are requested.
inline std::vector<SynthCase> synth_dataset(std::size_t n_volumes, const Dims& dims, std::size_t m,
                                            const Rng& rng, const SynthOptions& opt = {}) {
  if (dims.depth < 32 || dims.height < 32 || dims.width < 32) {
    throw DataError("synth_dataset: every axis must be >= 32, got " + dims_str(dims));
  }
  if (m == 0) throw DataError("synth_dataset: need at least one modality");
  const TransferTable table = synth_transfer_table(m, opt.noise_sigma);
  std::vector<SynthCase> out;
  out.reserve(n_volumes);
  for (std::size_t i = 0; i < n_volumes; ++i) {
    out.push_back(detail::synth_case(dims, m, table, opt, rng.substream(i)));
  }
  return out;
}

}  // namespace mmjigsaw
