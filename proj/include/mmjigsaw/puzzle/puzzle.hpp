#pragma once

// Multimodal jigsaw puzzle construction.
//
// For every axial slice a g x g grid of l x l patches is cut. Cell k has a
// nominal anchor on a lattice of pitch l + 2*jitter (so jittered patches
// never overlap) and is displaced by an independent integer offset in
// [-jitter, jitter] per axis. Each patch copies its pixels from one modality
// drawn uniformly at random. The ordered stack is then shuffled `per_slice`
// times, each with its own permutation.
//
// Convention: truth[i] is the grid position of shuffled patch i, so
// ordered[truth[i]] == patches[i] and apply_soft(perm_to_matrix(truth),
// patches) == ordered.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/core/rng.hpp"
#include "mmjigsaw/core/tensor.hpp"
#include "mmjigsaw/permute/permutation.hpp"
#include "mmjigsaw/puzzle/volume.hpp"

namespace mmjigsaw {

struct PuzzleSpec {
  std::size_t grid = 3;
  std::size_t patch_len = 0;  // 0: largest length the grid geometry allows
  std::size_t jitter = 5;
  std::size_t per_slice = 1;
  std::vector<Permutation> perm_pool;  // empty: uniform over all N! orderings
  double foreground_threshold = 0.05;  // slices below this fraction are skipped

  std::size_t patches() const { return grid * grid; }
};

struct Anchor {
  std::size_t y = 0;
  std::size_t x = 0;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

struct Puzzle {
  Tensor patches;  // [N, l, l], shuffled
  Permutation truth;
  std::vector<std::uint8_t> source_modalities;  // per shuffled patch
  std::vector<std::uint8_t> source_synthetic;   // per shuffled patch
  Tensor ordered;                               // [N, l, l], grid order
  std::vector<Anchor> anchors;                  // per grid cell, top-left corner
  std::size_t slice = 0;

  std::size_t n() const { return patches.dim(0); }
  std::size_t patch_len() const { return patches.dim(1); }
};

inline std::size_t resolve_patch_len(const PuzzleSpec& spec, std::size_t height, std::size_t width) {
  if (spec.patch_len != 0) return spec.patch_len;
  const std::size_t side = std::min(height, width) / std::max<std::size_t>(spec.grid, 1);
  return side > 2 * spec.jitter ? side - 2 * spec.jitter : 0;
}

inline void validate_spec(const PuzzleSpec& spec, const Dims& dims, std::size_t modalities) {
  if (spec.grid < 2) throw DataError("puzzle grid must be >= 2, got " + std::to_string(spec.grid));
  if (spec.per_slice == 0) throw DataError("puzzles per slice must be >= 1");
  if (modalities == 0 || modalities > 255) {
    throw DataError("modality count must be in 1..255, got " + std::to_string(modalities));
  }
  const std::size_t l = resolve_patch_len(spec, dims.height, dims.width);
  if (l == 0) {
    throw DataError("slice " + std::to_string(dims.height) + "x" + std::to_string(dims.width) +
                    " too small for a " + std::to_string(spec.grid) + "x" + std::to_string(spec.grid) +
                    " grid with jitter " + std::to_string(spec.jitter));
  }
  const std::size_t need = spec.grid * (l + 2 * spec.jitter);
  if (need > dims.height || need > dims.width) {
    throw DataError("grid " + std::to_string(spec.grid) + " x (patch " + std::to_string(l) +
                    " + 2*jitter " + std::to_string(spec.jitter) + ") needs " + std::to_string(need) +
                    " pixels, slice is " + std::to_string(dims.height) + "x" +
                    std::to_string(dims.width));
  }
  for (const auto& p : spec.perm_pool) {
    if (p.n() != spec.patches()) {
      throw DataError("permutation pool entry has size " + std::to_string(p.n()) + ", expected " +
                      std::to_string(spec.patches()));
    }
  }
}

// Nominal (un-jittered) top-left anchor of grid cell (row, col).
inline Anchor nominal_anchor(const PuzzleSpec& spec, const Dims& dims, std::size_t row, std::size_t col) {
  const std::size_t l = resolve_patch_len(spec, dims.height, dims.width);
  const std::size_t pitch = l + 2 * spec.jitter;
  const std::size_t oy = spec.jitter + (dims.height - spec.grid * pitch) / 2;
  const std::size_t ox = spec.jitter + (dims.width - spec.grid * pitch) / 2;
  return {oy + row * pitch, ox + col * pitch};
}

inline std::vector<Permutation> make_perm_pool(std::size_t n, std::size_t size, Rng rng) {
  std::vector<Permutation> pool;
  pool.reserve(size);
  for (std::size_t i = 0; i < size; ++i) pool.push_back(Permutation::random(n, rng));
  return pool;
}

inline double foreground_fraction(const MultimodalVolume& v, std::size_t z) {
  const std::size_t px = v.dims().slice_pixels();
  std::size_t fg = 0;
  for (std::size_t i = 0; i < px; ++i) {
    for (std::size_t m = 0; m < v.modalities(); ++m) {
      if (v.slice(m, z)[i] > 1e-6f) {
        ++fg;
        break;
      }
    }
  }
  return static_cast<double>(fg) / static_cast<double>(px);
}

// Slice z draws from rng.substream(z), so output does not depend on the
// order slices are visited in.
inline std::vector<Puzzle> create_puzzles(const MultimodalVolume& volume, const PuzzleSpec& spec,
                                          const Rng& rng) {
  const Dims& dims = volume.dims();
  validate_spec(spec, dims, volume.modalities());
  const std::size_t g = spec.grid, n = spec.patches();
  const std::size_t l = resolve_patch_len(spec, dims.height, dims.width);
  const long j = static_cast<long>(spec.jitter);

  std::vector<Puzzle> out;
  out.reserve(dims.depth * spec.per_slice);
  for (std::size_t z = 0; z < dims.depth; ++z) {
    if (spec.foreground_threshold > 0.0 && foreground_fraction(volume, z) < spec.foreground_threshold) {
      continue;
    }
    Rng srng = rng.substream(z);
    Tensor ordered({n, l, l});
    std::vector<std::uint8_t> mods(n);
    std::vector<Anchor> anchors(n);
    for (std::size_t cell = 0; cell < n; ++cell) {
      const Anchor nom = nominal_anchor(spec, dims, cell / g, cell % g);
      const long dy = srng.between(-j, j), dx = srng.between(-j, j);
      const Anchor a{static_cast<std::size_t>(static_cast<long>(nom.y) + dy),
                     static_cast<std::size_t>(static_cast<long>(nom.x) + dx)};
      anchors[cell] = a;
      const auto m = static_cast<std::size_t>(srng.below(volume.modalities()));
      mods[cell] = static_cast<std::uint8_t>(m);
      const auto src = volume.slice(m, z);
      for (std::size_t y = 0; y < l; ++y)
        for (std::size_t x = 0; x < l; ++x)
          ordered.at(cell, y, x) = src[(a.y + y) * dims.width + a.x + x];
    }
    for (std::size_t p = 0; p < spec.per_slice; ++p) {
      Permutation truth = spec.perm_pool.empty()
                              ? Permutation::random(n, srng)
                              : spec.perm_pool[static_cast<std::size_t>(srng.below(spec.perm_pool.size()))];
      Puzzle pz;
      pz.patches = Tensor({n, l, l});
      pz.source_modalities.resize(n);
      pz.source_synthetic.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cell = truth[i];
        std::copy_n(ordered.data().begin() + static_cast<long>(cell * l * l), l * l,
                    pz.patches.data().begin() + static_cast<long>(i * l * l));
        pz.source_modalities[i] = mods[cell];
        pz.source_synthetic[i] = volume.is_synthetic(mods[cell]) ? 1 : 0;
      }
      pz.truth = std::move(truth);
      pz.ordered = ordered;
      pz.anchors = anchors;
      pz.slice = z;
      out.push_back(std::move(pz));
    }
  }
  return out;
}

// Size of the multimodal solution space, (c!)^m.
inline boost::multiprecision::cpp_int solution_space(std::size_t c, std::size_t m) {
  if (c < 1 || m < 1) throw DataError("solution_space: c and m must be >= 1");
  boost::multiprecision::cpp_int f = 1;
  for (std::size_t i = 2; i <= c; ++i) f *= i;
  boost::multiprecision::cpp_int r = 1;
  for (std::size_t i = 0; i < m; ++i) r *= f;
  return r;
}

}  // namespace mmjigsaw
