#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "napkit/error.hpp"
#include "napkit/tensor.hpp"

namespace napkit {

static_assert(std::endian::native == std::endian::little, "napkit assumes a little-endian host");

enum class DType { f4, f8, i1, i2, i4, i8, u1, u2, u4, u8 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::i1:
    case DType::u1: return 1;
    case DType::i2:
    case DType::u2: return 2;
    case DType::f4:
    case DType::i4:
    case DType::u4: return 4;
    case DType::f8:
    case DType::i8:
    case DType::u8: return 8;
  }
  return 0;
}

struct NpyHeader {
  DType dtype = DType::f4;
  bool big_endian = false;
  Shape shape;
  std::size_t data_offset = 0;  // byte offset of the first payload byte
};

namespace detail {

[[noreturn]] inline void format_error(const std::filesystem::path& path, std::size_t offset, const std::string& msg) {
  throw Error(ErrorKind::format, path.string() + ": byte " + std::to_string(offset) + ": " + msg);
}

// Minimal scanner for the Python-literal dict numpy writes as its header.
class HeaderScanner {
 public:
  HeaderScanner(std::string_view text, std::size_t base, const std::filesystem::path& path)
      : text_(text), base_(base), path_(path) {}

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string quoted() {
    skip_ws();
    if (pos_ >= text_.size() || (text_[pos_] != '\'' && text_[pos_] != '"')) fail("expected quoted string");
    const char q = text_[pos_++];
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != q) ++pos_;
    if (pos_ >= text_.size()) fail("unterminated string");
    return std::string(text_.substr(start, pos_++ - start));
  }

  std::string word() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (start == pos_) fail("expected identifier");
    return std::string(text_.substr(start, pos_ - start));
  }

  std::size_t integer() {
    skip_ws();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(text_[pos_] - '0');
      ++pos_;
    }
    if (start == pos_) fail("expected non-negative integer");
    if (pos_ < text_.size() && text_[pos_] == 'L') ++pos_;
    return value;
  }

  std::size_t offset() const { return base_ + pos_; }

  [[noreturn]] void fail(const std::string& msg) const { format_error(path_, offset(), msg); }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t base_;
  const std::filesystem::path& path_;
};

inline DType parse_descr(const std::string& descr, bool& big_endian, HeaderScanner& sc) {
  if (descr.size() < 3) sc.fail("malformed descr '" + descr + "'");
  const char order = descr[0];
  if (order != '<' && order != '>' && order != '|' && order != '=') sc.fail("malformed descr '" + descr + "'");
  big_endian = order == '>';
  const std::string code = descr.substr(1);
  if (code == "f4") return DType::f4;
  if (code == "f8") return DType::f8;
  if (code == "i1") return DType::i1;
  if (code == "i2") return DType::i2;
  if (code == "i4") return DType::i4;
  if (code == "i8") return DType::i8;
  if (code == "u1") return DType::u1;
  if (code == "u2") return DType::u2;
  if (code == "u4") return DType::u4;
  if (code == "u8") return DType::u8;
  throw Error(ErrorKind::unsupported_dtype, "unsupported dtype '" + descr + "'");
}

template <typename Raw>
Raw load_raw(const unsigned char* p, bool swap) {
  Raw v;
  std::memcpy(&v, p, sizeof(Raw));
  if (swap) {
    if constexpr (sizeof(Raw) == 2) v = std::bit_cast<Raw>(__builtin_bswap16(std::bit_cast<std::uint16_t>(v)));
    if constexpr (sizeof(Raw) == 4) v = std::bit_cast<Raw>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    if constexpr (sizeof(Raw) == 8) v = std::bit_cast<Raw>(__builtin_bswap64(std::bit_cast<std::uint64_t>(v)));
  }
  return v;
}

template <typename T>
T convert_element(const unsigned char* p, DType t, bool swap) {
  switch (t) {
    case DType::f4: return static_cast<T>(load_raw<float>(p, swap));
    case DType::f8: return static_cast<T>(load_raw<double>(p, swap));
    case DType::i1: return static_cast<T>(load_raw<std::int8_t>(p, swap));
    case DType::i2: return static_cast<T>(load_raw<std::int16_t>(p, swap));
    case DType::i4: return static_cast<T>(load_raw<std::int32_t>(p, swap));
    case DType::i8: return static_cast<T>(load_raw<std::int64_t>(p, swap));
    case DType::u1: return static_cast<T>(load_raw<std::uint8_t>(p, swap));
    case DType::u2: return static_cast<T>(load_raw<std::uint16_t>(p, swap));
    case DType::u4: return static_cast<T>(load_raw<std::uint32_t>(p, swap));
    case DType::u8: return static_cast<T>(load_raw<std::uint64_t>(p, swap));
  }
  return T{};
}

}  // namespace detail

inline NpyHeader read_npy_header(std::istream& in, const std::filesystem::path& path) {
  unsigned char prefix[8];
  in.read(reinterpret_cast<char*>(prefix), 8);
  if (in.gcount() != 8) detail::format_error(path, static_cast<std::size_t>(in.gcount()), "truncated magic");
  static constexpr unsigned char magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  for (std::size_t i = 0; i < 6; ++i) {
    if (prefix[i] != magic[i]) detail::format_error(path, i, "bad magic");
  }
  const unsigned major = prefix[6];
  std::size_t header_len = 0;
  std::size_t len_bytes = 0;
  if (major == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (in.gcount() != 2) detail::format_error(path, 8, "truncated header length");
    header_len = b[0] | (std::size_t{b[1]} << 8);
    len_bytes = 2;
  } else if (major == 2 || major == 3) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) detail::format_error(path, 8, "truncated header length");
    header_len = b[0] | (std::size_t{b[1]} << 8) | (std::size_t{b[2]} << 16) | (std::size_t{b[3]} << 24);
    len_bytes = 4;
  } else {
    detail::format_error(path, 6, "unsupported format version " + std::to_string(major));
  }
  const std::size_t base = 8 + len_bytes;
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::size_t>(in.gcount()) != header_len) {
    detail::format_error(path, base + static_cast<std::size_t>(in.gcount()), "truncated header");
  }

  NpyHeader h;
  h.data_offset = base + header_len;
  detail::HeaderScanner sc(text, base, path);
  bool have_descr = false, have_order = false, have_shape = false;
  sc.expect('{');
  while (!sc.peek('}')) {
    const std::string key = sc.quoted();
    sc.expect(':');
    if (key == "descr") {
      h.dtype = detail::parse_descr(sc.quoted(), h.big_endian, sc);
      have_descr = true;
    } else if (key == "fortran_order") {
      const std::size_t at = sc.offset();
      const std::string v = sc.word();
      if (v == "True") detail::format_error(path, at, "fortran_order arrays are not supported");
      if (v != "False") detail::format_error(path, at, "expected True or False");
      have_order = true;
    } else if (key == "shape") {
      sc.expect('(');
      while (!sc.peek(')')) {
        h.shape.push_back(sc.integer());
        if (!sc.peek(',')) break;
        sc.expect(',');
      }
      sc.expect(')');
      have_shape = true;
    } else {
      sc.fail("unexpected key '" + key + "'");
    }
    if (!sc.peek(',')) break;
    sc.expect(',');
  }
  sc.expect('}');
  if (!have_descr || !have_order || !have_shape) sc.fail("header lacks descr, fortran_order or shape");
  return h;
}

/// Streams contiguous row blocks (along the leading axis) out of an array file.
template <typename T>
class NpyReader {
 public:
  explicit NpyReader(std::filesystem::path path) : path_(std::move(path)), in_(path_, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::io, "cannot open " + path_.string());
    header_ = read_npy_header(in_, path_);
    in_.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::size_t>(in_.tellg());
    const std::size_t expected = element_count(header_.shape) * dtype_size(header_.dtype);
    if (file_size - header_.data_offset != expected) {
      detail::format_error(path_, file_size,
                           "payload holds " + std::to_string(file_size - header_.data_offset) + " bytes, header " +
                               shape_string(header_.shape) + " needs " + std::to_string(expected));
    }
  }

  const NpyHeader& header() const noexcept { return header_; }
  const Shape& shape() const noexcept { return header_.shape; }
  const std::filesystem::path& path() const noexcept { return path_; }

  std::size_t rows() const { return header_.shape.empty() ? 1 : header_.shape.front(); }

  std::size_t row_size() const {
    if (header_.shape.empty()) return 1;
    return element_count(Shape(header_.shape.begin() + 1, header_.shape.end()));
  }

  void read_rows(std::size_t first, std::size_t count, std::span<T> out) {
    if (first + count > rows()) {
      throw Error(ErrorKind::index, path_.string() + ": rows [" + std::to_string(first) + ", " +
                                        std::to_string(first + count) + ") out of range " + std::to_string(rows()));
    }
    const std::size_t n = count * row_size();
    if (out.size() != n) throw Error(ErrorKind::shape, "read_rows: output span has wrong size");
    const std::size_t esize = dtype_size(header_.dtype);
    buffer_.resize(n * esize);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(header_.data_offset + first * row_size() * esize));
    in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    if (static_cast<std::size_t>(in_.gcount()) != buffer_.size()) {
      throw Error(ErrorKind::io, "short read from " + path_.string());
    }
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = detail::convert_element<T>(buffer_.data() + i * esize, header_.dtype, header_.big_endian);
      if (!std::isfinite(static_cast<double>(out[i]))) {
        throw Error(ErrorKind::numeric,
                    path_.string() + ": non-finite value at element " + std::to_string(first * row_size() + i));
      }
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  NpyHeader header_;
  std::vector<unsigned char> buffer_;
};

template <typename T = float>
BasicTensor<T> read_array_file(const std::filesystem::path& path) {
  NpyReader<T> reader(path);
  BasicTensor<T> out(reader.shape());
  if (reader.shape().empty()) {
    reader.read_rows(0, 1, out.data());
  } else if (reader.rows() > 0) {
    reader.read_rows(0, reader.rows(), out.data());
  }
  return out;
}

template <typename T>
void write_array_file(const BasicTensor<T>& t, const std::filesystem::path& path) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "only float payloads are written");
  if (!t.all_finite()) throw Error(ErrorKind::argument, "refusing to write non-finite tensor to " + path.string());

  std::string dict = "{'descr': '";
  dict += std::is_same_v<T, float> ? "<f4" : "<f8";
  dict += "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < t.rank(); ++i) {
    dict += std::to_string(t.shape()[i]);
    if (t.rank() == 1 || i + 1 < t.rank()) dict += ",";
    if (i + 1 < t.rank()) dict += " ";
  }
  dict += "), }";
  // Pad so the payload starts on a 64-byte boundary.
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  const unsigned char prefix[10] = {0x93,
                                    'N',
                                    'U',
                                    'M',
                                    'P',
                                    'Y',
                                    1,
                                    0,
                                    static_cast<unsigned char>(dict.size() & 0xff),
                                    static_cast<unsigned char>(dict.size() >> 8)};
  out.write(reinterpret_cast<const char*>(prefix), 10);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace napkit
