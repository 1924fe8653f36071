#pragma once

// Little-endian primitives shared by the checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include "pcnn/error.hpp"

namespace pcnn::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open '" + path + "' for writing");
  }

  void magic(std::string_view m) { raw(m.data(), m.size()); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(std::string_view s) { raw(s.data(), s.size()); }

  void close() {
    out_.flush();
    if (!out_) throw std::runtime_error("write to '" + path_ + "' failed");
    out_.close();
  }

private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw std::runtime_error("write to '" + path_ + "' failed");
  }

  std::string path_;
  std::ofstream out_;
};

class Reader {
public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open '" + path + "' for reading");
  }

  void expect_magic(std::string_view m) {
    const std::uint64_t at = offset_;
    std::string got(m.size(), '\0');
    raw(got.data(), got.size(), "magic");
    if (got != m) throw FormatError("bad magic: expected '" + std::string(m) + "'", at);
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    raw(&v, sizeof v, what);
    return v;
  }
  float f32(const char* what) {
    float v;
    raw(&v, sizeof v, what);
    return v;
  }
  double f64(const char* what) {
    double v;
    raw(&v, sizeof v, what);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }
  void f32_block(float* dst, std::size_t n, const char* what) { raw(dst, n * sizeof(float), what); }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  std::uint64_t offset() const noexcept { return offset_; }

private:
  void raw(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::uint64_t>(in_.gcount());
    if (got != n) throw FormatError(std::string("truncated file while reading ") + what, offset_ + got);
    offset_ += n;
  }

  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace pcnn::io
