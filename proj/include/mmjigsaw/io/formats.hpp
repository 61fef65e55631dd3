#pragma once

// On-disk formats. All integers and floats are little-endian.
//
//   MMV1     "MMV1" u32 M, D, H, W; M*D*H*W f32 (modality-major, then depth);
//            optional trailing "PRV1" + M u8 synthetic flags
//   MSK1     "MSK1" u32 D, H, W; u8 class count; D*H*W u8 labels
//   PZSOLV1  "PZSOLV1" u8 role length + role; arch descriptor; u32 outputs;
//            u32 input channels; u64 count + f32 parameters in declaration
//            order; u32 length + training report CSV
//   PZXMOD1  "PZXMOD1" u32 base channels, u32 disc channels, f64 lambda,
//            u64 trained steps; u64 count + f32 parameters
//   PZL1     "PZL1" u32 count, N, l; per puzzle u32 slice, N u8 truth,
//            N u8 modality, N u8 synthetic, N (u32 y, u32 x) anchors,
//            N*l*l f32 patches, N*l*l f32 ordered

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmjigsaw/crossmodal/translator.hpp"
#include "mmjigsaw/io/binary.hpp"
#include "mmjigsaw/puzzle/puzzle.hpp"
#include "mmjigsaw/puzzle/volume.hpp"
#include "mmjigsaw/solver/solver.hpp"
#include "mmjigsaw/transfer/segmodel.hpp"

namespace mmjigsaw {

// ---- MMV ----

inline std::vector<std::uint8_t> encode_mmv(const MultimodalVolume& v) {
  ByteWriter w;
  w.text("MMV1");
  w.u32(static_cast<std::uint32_t>(v.modalities()));
  w.u32(static_cast<std::uint32_t>(v.dims().depth));
  w.u32(static_cast<std::uint32_t>(v.dims().height));
  w.u32(static_cast<std::uint32_t>(v.dims().width));
  w.f32s(v.data());
  if (v.any_synthetic()) {
    w.text("PRV1");
    for (std::uint8_t f : v.synthetic_flags()) w.u8(f);
  }
  return w.take();
}

inline MultimodalVolume decode_mmv(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "MMV file");
  r.magic("MMV1");
  const std::uint32_t m = r.u32(), d = r.u32(), h = r.u32(), wd = r.u32();
  if (m > 255) throw FormatError(FormatErrorCode::bad_header, "MMV file declares " + std::to_string(m) + " modalities");
  const std::uint64_t n = checked_extent_product({m, d, h, wd}, "MMV file");
  std::vector<float> data = r.finite_f32s(n, "voxel data");
  MultimodalVolume v(m, Dims{d, h, wd}, std::move(data));
  if (!r.at_end()) {
    r.magic("PRV1");
    for (std::uint32_t k = 0; k < m; ++k) {
      const std::uint8_t f = r.u8();
      if (f > 1) throw FormatError(FormatErrorCode::bad_value, "MMV provenance flag must be 0 or 1");
      v.set_synthetic(k, f != 0);
    }
    r.expect_end();
  }
  return v;
}

inline void write_mmv(const std::filesystem::path& path, const MultimodalVolume& v) {
  write_file_atomic(path, encode_mmv(v));
}
inline MultimodalVolume read_mmv(const std::filesystem::path& path) { return decode_mmv(read_file(path)); }

// ---- MSK ----

inline std::vector<std::uint8_t> encode_msk(const LabelVolume& m) {
  ByteWriter w;
  w.text("MSK1");
  w.u32(static_cast<std::uint32_t>(m.dims.depth));
  w.u32(static_cast<std::uint32_t>(m.dims.height));
  w.u32(static_cast<std::uint32_t>(m.dims.width));
  w.u8(m.classes);
  w.bytes(m.labels.data(), m.labels.size());
  return w.take();
}

inline LabelVolume decode_msk(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "MSK file");
  r.magic("MSK1");
  const std::uint32_t d = r.u32(), h = r.u32(), wd = r.u32();
  const std::uint8_t classes = r.u8();
  if (classes == 0) throw FormatError(FormatErrorCode::bad_header, "MSK file declares zero classes");
  const std::uint64_t n = checked_extent_product({d, h, wd}, "MSK file");
  const auto raw = r.bytes(static_cast<std::size_t>(n));
  r.expect_end();
  LabelVolume m{Dims{d, h, wd}, classes, std::vector<std::uint8_t>(raw.begin(), raw.end())};
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (m.labels[i] >= classes) {
      throw FormatError(FormatErrorCode::bad_label, "MSK voxel " + std::to_string(i) + " has label " +
                                                        std::to_string(m.labels[i]) + " >= class count " +
                                                        std::to_string(classes));
    }
  }
  return m;
}

inline void write_msk(const std::filesystem::path& path, const LabelVolume& m) {
  write_file_atomic(path, encode_msk(m));
}
inline LabelVolume read_msk(const std::filesystem::path& path) { return decode_msk(read_file(path)); }

// ---- PZSOLV1 ----

inline const char* kRoleSolver = "solver";
inline const char* kRoleSegmentation = "segmentation";

namespace detail {

inline void write_arch(ByteWriter& w, const EncoderArch& a) {
  w.u32(static_cast<std::uint32_t>(a.input_side));
  w.u32(static_cast<std::uint32_t>(a.in_channels));
  for (auto c : a.channels) w.u32(static_cast<std::uint32_t>(c));
  for (auto k : a.kernels) w.u32(static_cast<std::uint32_t>(k));
  for (auto s : a.strides) w.u32(static_cast<std::uint32_t>(s));
  w.u8(a.normalize ? 1 : 0);
}

inline EncoderArch read_arch(ByteReader& r) {
  EncoderArch a;
  auto bounded = [&](std::uint32_t v, std::uint32_t hi, const char* field) {
    if (v == 0 || v > hi) {
      throw FormatError(FormatErrorCode::bad_header,
                        r.what() + " " + field + " = " + std::to_string(v) + " outside 1.." + std::to_string(hi));
    }
    return static_cast<std::size_t>(v);
  };
  a.input_side = bounded(r.u32(), 4096, "input side");
  a.in_channels = bounded(r.u32(), 255, "input channels");
  for (auto& c : a.channels) c = bounded(r.u32(), 4096, "channel width");
  for (auto& k : a.kernels) k = bounded(r.u32(), 31, "kernel size");
  for (auto& s : a.strides) s = bounded(r.u32(), 16, "stride");
  const std::uint8_t norm = r.u8();
  if (norm > 1) throw FormatError(FormatErrorCode::bad_header, r.what() + " normalisation flag must be 0 or 1");
  a.normalize = norm != 0;
  return a;
}

template <class Tensors>
void write_params(ByteWriter& w, const Tensors& ts) {
  std::uint64_t n = 0;
  for (const auto* t : ts) n += t->size();
  w.u64(n);
  for (const auto* t : ts) w.f32s(t->data());
}

template <class Tensors>
void read_params(ByteReader& r, Tensors ts) {
  std::uint64_t expect = 0;
  for (const auto* t : ts) expect += t->size();
  const std::uint64_t n = r.u64();
  if (n != expect) {
    throw FormatError(FormatErrorCode::bad_header, r.what() + " stores " + std::to_string(n) +
                                                       " parameters, architecture needs " + std::to_string(expect));
  }
  const auto values = r.finite_f32s(n, "parameters");
  std::size_t k = 0;
  for (auto* t : ts)
    for (auto& v : t->data()) v = values[k++];
}

inline void write_header(ByteWriter& w, const std::string& role, const EncoderArch& arch, std::size_t outputs,
                         std::size_t in_channels) {
  w.text("PZSOLV1");
  w.u8(static_cast<std::uint8_t>(role.size()));
  w.text(role);
  write_arch(w, arch);
  w.u32(static_cast<std::uint32_t>(outputs));
  w.u32(static_cast<std::uint32_t>(in_channels));
}

struct CheckpointHeader {
  std::string role;
  EncoderArch arch;
  std::size_t outputs = 0;
  std::size_t in_channels = 0;
};

inline CheckpointHeader read_header(ByteReader& r) {
  r.magic("PZSOLV1");
  CheckpointHeader h;
  h.role = r.text(r.u8());
  if (h.role != kRoleSolver && h.role != kRoleSegmentation) {
    throw FormatError(FormatErrorCode::bad_header, "checkpoint role \"" + h.role + "\" is not recognised");
  }
  h.arch = read_arch(r);
  h.outputs = r.u32();
  h.in_channels = r.u32();
  if (h.outputs == 0 || h.outputs > 4096) {
    throw FormatError(FormatErrorCode::bad_header, "checkpoint output width " + std::to_string(h.outputs));
  }
  if (h.in_channels == 0 || h.in_channels > 255) {
    throw FormatError(FormatErrorCode::bad_header, "checkpoint input channels " + std::to_string(h.in_channels));
  }
  return h;
}

inline std::string read_csv_block(ByteReader& r) {
  const std::uint32_t len = r.u32();
  std::string csv = r.text(len);
  r.expect_end();
  return csv;
}

// Rejects geometry whose parameter count could not be allocated.
inline void check_param_budget(const EncoderArch& a, std::size_t in_channels, std::size_t outputs, const std::string& what) {
  std::uint64_t total = 0, in = in_channels;
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    total += static_cast<std::uint64_t>(a.channels[i]) * in * a.kernels[i] * a.kernels[i];
    in = a.channels[i];
  }
  total += static_cast<std::uint64_t>(outputs) * a.channels.back() * 16;
  if (total > (std::uint64_t{1} << 28)) {
    throw FormatError(FormatErrorCode::dim_overflow, what + " architecture implies too many parameters");
  }
}

}  // namespace detail

struct SolverCheckpoint {
  SolverParams params;
  std::string report_csv;
};

inline std::vector<std::uint8_t> encode_solver_checkpoint(const SolverParams& p, const std::string& report_csv = {}) {
  ByteWriter w;
  detail::write_header(w, kRoleSolver, p.arch, p.outputs, p.arch.in_channels);
  detail::write_params(w, p.tensors());
  w.u32(static_cast<std::uint32_t>(report_csv.size()));
  w.text(report_csv);
  return w.take();
}

inline SolverCheckpoint decode_solver_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "solver checkpoint");
  const auto h = detail::read_header(r);
  if (h.role != kRoleSolver) {
    throw FormatError(FormatErrorCode::bad_header, "checkpoint role is \"" + h.role + "\", expected solver");
  }
  if (h.in_channels != h.arch.in_channels) {
    throw FormatError(FormatErrorCode::bad_header, "solver checkpoint input channels disagree with its arch");
  }
  detail::check_param_budget(h.arch, h.in_channels, h.outputs, r.what());
  SolverCheckpoint c;
  c.params = SolverParams::make(h.arch, h.outputs);
  detail::read_params(r, c.params.tensors());
  c.report_csv = detail::read_csv_block(r);
  return c;
}

struct SegCheckpoint {
  SegModel model;
  std::string report_csv;
};

inline std::vector<std::uint8_t> encode_seg_checkpoint(const SegModel& m, const std::string& report_csv = {}) {
  ByteWriter w;
  detail::write_header(w, kRoleSegmentation, m.arch, m.classes, m.in_channels);
  detail::write_params(w, m.tensors());
  w.u32(static_cast<std::uint32_t>(report_csv.size()));
  w.text(report_csv);
  return w.take();
}

inline SegCheckpoint decode_seg_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "segmentation checkpoint");
  const auto h = detail::read_header(r);
  if (h.role != kRoleSegmentation) {
    throw FormatError(FormatErrorCode::bad_header, "checkpoint role is \"" + h.role + "\", expected segmentation");
  }
  if (h.outputs < 2 || h.outputs > 255) {
    throw FormatError(FormatErrorCode::bad_header, "segmentation checkpoint class count " + std::to_string(h.outputs));
  }
  detail::check_param_budget(h.arch, h.in_channels, h.outputs, r.what());
  SegCheckpoint c;
  c.model = SegModel::make(h.arch, h.in_channels, h.outputs);
  detail::read_params(r, c.model.tensors());
  c.report_csv = detail::read_csv_block(r);
  return c;
}

// Role of a PZSOLV1 file without decoding the parameters.
inline std::string checkpoint_role(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  return detail::read_header(r).role;
}

// ---- PZXMOD1 ----

inline std::vector<std::uint8_t> encode_translator(const TranslatorParams& p) {
  ByteWriter w;
  w.text("PZXMOD1");
  w.u32(static_cast<std::uint32_t>(p.arch.base_channels));
  w.u32(static_cast<std::uint32_t>(p.arch.disc_channels));
  w.f64(p.lambda);
  w.u64(p.trained_steps);
  detail::write_params(w, p.tensors());
  return w.take();
}

inline TranslatorParams decode_translator(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "translator checkpoint");
  r.magic("PZXMOD1");
  TranslatorArch a;
  a.base_channels = r.u32();
  a.disc_channels = r.u32();
  if (a.base_channels == 0 || a.base_channels > 1024 || a.disc_channels == 0 || a.disc_channels > 1024) {
    throw FormatError(FormatErrorCode::bad_header, "translator channel widths out of range");
  }
  const double lambda = r.f64();
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw FormatError(FormatErrorCode::bad_value, "translator lambda must be finite and >= 0");
  }
  const std::uint64_t steps = r.u64();
  auto p = TranslatorParams::make(a, lambda);
  p.trained_steps = steps;
  detail::read_params(r, p.tensors());
  r.expect_end();
  return p;
}

// ---- PZL1 ----

inline std::vector<std::uint8_t> encode_puzzles(std::span<const Puzzle> puzzles) {
  ByteWriter w;
  w.text("PZL1");
  const std::size_t n = puzzles.empty() ? 0 : puzzles.front().n();
  const std::size_t l = puzzles.empty() ? 0 : puzzles.front().patch_len();
  w.u32(static_cast<std::uint32_t>(puzzles.size()));
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(l));
  for (const auto& p : puzzles) {
    if (p.n() != n || p.patch_len() != l) throw DataError("encode_puzzles: puzzles differ in size");
    w.u32(static_cast<std::uint32_t>(p.slice));
    for (std::size_t i = 0; i < n; ++i) w.u8(static_cast<std::uint8_t>(p.truth[i]));
    for (auto m : p.source_modalities) w.u8(m);
    for (auto s : p.source_synthetic) w.u8(s);
    for (const auto& a : p.anchors) {
      w.u32(static_cast<std::uint32_t>(a.y));
      w.u32(static_cast<std::uint32_t>(a.x));
    }
    w.f32s(p.patches.data());
    w.f32s(p.ordered.data());
  }
  return w.take();
}

inline std::vector<Puzzle> decode_puzzles(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "puzzle file");
  r.magic("PZL1");
  const std::uint32_t count = r.u32(), n = r.u32(), l = r.u32();
  if (count > 0 && (n < 4 || n > 255 || l == 0 || l > 4096)) {
    throw FormatError(FormatErrorCode::bad_header, "puzzle file declares N=" + std::to_string(n) + ", l=" + std::to_string(l));
  }
  const std::uint64_t per = count == 0 ? 0 : 4 + 3 * std::uint64_t{n} + 8 * std::uint64_t{n} +
                                                 8 * checked_extent_product({n, l, l}, "puzzle file");
  r.need(per * count);
  std::vector<Puzzle> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    Puzzle p;
    p.slice = r.u32();
    std::vector<std::size_t> truth(n);
    for (auto& t : truth) t = r.u8();
    try {
      p.truth = Permutation(std::move(truth));
    } catch (const DataError& e) {
      throw FormatError(FormatErrorCode::bad_value, "puzzle " + std::to_string(k) + ": " + e.what());
    }
    const auto mods = r.bytes(n), syn = r.bytes(n);
    p.source_modalities.assign(mods.begin(), mods.end());
    p.source_synthetic.assign(syn.begin(), syn.end());
    p.anchors.resize(n);
    for (auto& a : p.anchors) {
      a.y = r.u32();
      a.x = r.u32();
    }
    p.patches = Tensor({n, l, l}, r.finite_f32s(std::uint64_t{n} * l * l, "patches"));
    p.ordered = Tensor({n, l, l}, r.finite_f32s(std::uint64_t{n} * l * l, "ordered patches"));
    out.push_back(std::move(p));
  }
  r.expect_end();
  return out;
}

}  // namespace mmjigsaw
