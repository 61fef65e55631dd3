#pragma once

// Shared fixtures for the test binaries.

#include <cstddef>
#include <vector>

#include "mmjigsaw/mmjigsaw.hpp"

namespace mmjigsaw::testing {

inline MultimodalVolume noise_volume(std::size_t m, Dims d, std::uint64_t seed) {
  MultimodalVolume v(m, d);
  Rng rng(seed);
  for (auto& x : v.data()) x = static_cast<float>(0.1 + 0.9 * rng.uniform());
  return v;
}

// One puzzle with `grid` x `grid` patches of side `len`, cut from noise.
inline Puzzle toy_puzzle(std::size_t grid, std::size_t len, std::uint64_t seed) {
  const auto v = noise_volume(1, {1, grid * len, grid * len}, seed);
  PuzzleSpec spec;
  spec.grid = grid;
  spec.jitter = 0;
  spec.foreground_threshold = 0.0;
  return create_puzzles(v, spec, Rng(seed + 1)).at(0);
}

inline std::vector<Puzzle> toy_puzzles(std::size_t count, std::size_t grid, std::size_t len, std::uint64_t seed) {
  const auto v = noise_volume(1, {count, grid * len, grid * len}, seed);
  PuzzleSpec spec;
  spec.grid = grid;
  spec.jitter = 0;
  spec.foreground_threshold = 0.0;
  return create_puzzles(v, spec, Rng(seed + 1));
}

template <class P, class T = double>
BasicTensor<T> flatten(const P& params) {
  std::size_t n = 0;
  for (const auto* t : params.tensors()) n += t->size();
  BasicTensor<T> out({n});
  std::size_t k = 0;
  for (const auto* t : params.tensors())
    for (std::size_t i = 0; i < t->size(); ++i) out[k++] = static_cast<T>((*t)[i]);
  return out;
}

template <class P, class T>
void unflatten(const BasicTensor<T>& flat, P& params) {
  std::size_t k = 0;
  for (auto* t : params.tensors())
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = static_cast<decltype((*t)[i] + 0)>(flat[k++]);
}

// Small encoder so double-precision gradient checks stay quick.
inline EncoderArch small_arch(std::size_t side = 8) {
  EncoderArch a;
  a.input_side = side;
  a.channels = {4, 4, 4, 4, 4};
  return a;
}

// Worst relative error of d(data loss + L2)/d(theta) over every parameter.
inline double solver_gradcheck(const Puzzle& pz, const EncoderArch& arch, int iters, double l2, std::uint64_t seed) {
  auto params = init_params<double>(arch, pz.n(), Rng(seed), {0.0, 0.5});
  const auto patches = BasicTensor<double>::cast(pz.patches);
  const auto ordered = BasicTensor<double>::cast(pz.ordered);
  auto grads = params.zeros_like();
  puzzle_loss_and_grad(params, patches, ordered, iters, 1.0, &grads);
  l2_penalty_backward(std::as_const(params).weight_tensors(), grads.weight_tensors(), l2);
  auto probe = params;
  auto f = [&](const BasicTensor<double>& theta) {
    unflatten(theta, probe);
    return puzzle_loss_and_grad(probe, patches, ordered, iters, 1.0, static_cast<BasicSolverParams<double>*>(nullptr)) +
           l2_penalty(std::as_const(probe).weight_tensors(), l2);
  };
  return gradcheck<double>(f, flatten(grads), flatten(params), 1e-5);
}

}  // namespace mmjigsaw::testing

namespace mmjigsaw::testing {

struct FuzzTally {
  std::size_t classified = 0;    // FormatError
  std::size_t accepted = 0;      // parsed as a valid file
  std::size_t unclassified = 0;  // any other exception
  std::string first_unclassified;
};

// Random single mutations of `valid`: bit flips, byte overwrites, truncation,
// insertion, header-field overwrites and trailing garbage.
inline std::vector<std::uint8_t> mutate(const std::vector<std::uint8_t>& valid, Rng& rng) {
  auto b = valid;
  const auto pos = [&](std::size_t n) { return n == 0 ? std::size_t{0} : static_cast<std::size_t>(rng.below(n)); };
  switch (rng.below(6)) {
    case 0:
      if (!b.empty()) b[pos(b.size())] ^= static_cast<std::uint8_t>(1u << rng.below(8));
      break;
    case 1:
      if (!b.empty()) b[pos(b.size())] = static_cast<std::uint8_t>(rng.below(256));
      break;
    case 2:
      b.resize(pos(b.size()));
      break;
    case 3: {
      const auto at = pos(b.size() + 1);
      const auto n = 1 + rng.below(8);
      for (std::size_t i = 0; i < n; ++i)
        b.insert(b.begin() + static_cast<long>(at), static_cast<std::uint8_t>(rng.below(256)));
      break;
    }
    case 4: {
      const std::size_t field = std::min<std::size_t>(b.size() / 4, 8);
      if (field == 0) break;
      const std::size_t at = 4 * pos(field);
      const std::uint32_t v = static_cast<std::uint32_t>(rng.next_u64());
      for (std::size_t i = 0; i < 4 && at + i < b.size(); ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
      break;
    }
    default:
      for (std::size_t i = 0, n = 1 + rng.below(16); i < n; ++i) b.push_back(static_cast<std::uint8_t>(rng.below(256)));
  }
  return b;
}

template <class Decode>
FuzzTally fuzz(const std::vector<std::uint8_t>& valid, Decode decode, std::size_t mutations, Rng rng) {
  FuzzTally t;
  for (std::size_t i = 0; i < mutations; ++i) {
    const auto bytes = mutate(valid, rng);
    try {
      decode(std::span<const std::uint8_t>(bytes));
      ++t.accepted;
    } catch (const FormatError&) {
      ++t.classified;
    } catch (const std::exception& e) {
      if (t.unclassified++ == 0) t.first_unclassified = e.what();
    }
  }
  return t;
}

}  // namespace mmjigsaw::testing
