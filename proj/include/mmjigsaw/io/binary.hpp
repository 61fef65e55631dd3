#pragma once

// Little-endian byte encoding, bounds-checked decoding, classified format
// errors and atomic file writes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mmjigsaw/core/error.hpp"

namespace mmjigsaw {

enum class FormatErrorCode {
  bad_magic,
  truncated,
  dim_overflow,
  bad_header,
  bad_label,
  bad_value,
  trailing_bytes,
  io,
};

inline const char* format_error_name(FormatErrorCode c) {
  switch (c) {
    case FormatErrorCode::bad_magic: return "bad magic";
    case FormatErrorCode::truncated: return "truncated";
    case FormatErrorCode::dim_overflow: return "dimension overflow";
    case FormatErrorCode::bad_header: return "bad header";
    case FormatErrorCode::bad_label: return "bad label";
    case FormatErrorCode::bad_value: return "bad value";
    case FormatErrorCode::trailing_bytes: return "trailing bytes";
    case FormatErrorCode::io: return "i/o error";
  }
  return "unknown";
}

class FormatError : public DataError {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : DataError(std::string(format_error_name(code)) + ": " + what), code_(code) {}
  FormatErrorCode code() const { return code_; }

 private:
  FormatErrorCode code_;
};

// Upper bound on element counts any reader will allocate.
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void text(std::string_view s) { bytes(s.data(), s.size()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> vs) {
    buf_.reserve(buf_.size() + 4 * vs.size());
    for (float v : vs) f32(v);
  }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void need(std::uint64_t n) const {
    if (n > remaining()) {
      throw FormatError(FormatErrorCode::truncated, what_ + " needs " + std::to_string(n) + " more bytes at offset " +
                                                        std::to_string(pos_) + ", " + std::to_string(remaining()) +
                                                        " left");
    }
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool peek(std::string_view magic) const {
    return remaining() >= magic.size() && std::memcmp(data_.data() + pos_, magic.data(), magic.size()) == 0;
  }
  void magic(std::string_view m) {
    if (remaining() < m.size() || !peek(m)) {
      throw FormatError(FormatErrorCode::bad_magic, what_ + " does not start with \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
  }
  std::uint8_t u8() { return bytes(1)[0]; }
  std::uint32_t u32() {
    const auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    const auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  // `count` finite floats; the byte budget is checked before allocating.
  std::vector<float> finite_f32s(std::uint64_t count, const std::string& field) {
    if (count > kMaxElements) {
      throw FormatError(FormatErrorCode::dim_overflow, what_ + " " + field + " declares " + std::to_string(count) +
                                                           " values");
    }
    need(4 * count);
    std::vector<float> out(static_cast<std::size_t>(count));
    for (auto& v : out) {
      v = f32();
      if (!std::isfinite(v)) throw FormatError(FormatErrorCode::bad_value, what_ + " " + field + " holds NaN/Inf");
    }
    return out;
  }
  std::string text(std::size_t n) {
    const auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }
  void expect_end() const {
    if (!at_end()) {
      throw FormatError(FormatErrorCode::trailing_bytes,
                        what_ + " has " + std::to_string(remaining()) + " unexpected trailing bytes");
    }
  }
  const std::string& what() const { return what_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

// Product of extents, rejecting zero extents and overflow past kMaxElements.
inline std::uint64_t checked_extent_product(std::initializer_list<std::uint64_t> extents, const std::string& what) {
  std::uint64_t n = 1;
  for (std::uint64_t e : extents) {
    if (e == 0) throw FormatError(FormatErrorCode::bad_header, what + " has a zero extent");
    if (n > kMaxElements / e) {
      throw FormatError(FormatErrorCode::dim_overflow, what + " extents overflow the element limit");
    }
    n *= e;
  }
  return n;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes to "<path>.tmp" and renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorCode::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError(FormatErrorCode::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace mmjigsaw
