/*
 * Copyright 2026 The privlora Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "privlora/common/error.hpp"
#include "privlora/common/matrix.hpp"

namespace privlora {

static_assert(std::endian::native == std::endian::little,
              "wire formats are little-endian; big-endian hosts need byte swapping");

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void magic(std::string_view m) { raw(m.data(), m.size()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void u64s(std::span<const std::uint64_t> v) { raw(v.data(), v.size_bytes()); }
  void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
  void digest(const Digest& d) { raw(d.data(), d.size()); }
  void blob(std::span<const std::uint8_t> b) {
    u64(b.size());
    raw(b.data(), b.size());
  }
  /// rows u32, cols u32, then row-major f64.
  void matrix(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    f64s(m.data());
  }

 private:
  Bytes& out_;
};

/// Bounds-checked little-endian reader over a byte span.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  void expect_magic(std::string_view m, const char* what) {
    need(m.size());
    if (std::memcmp(in_.data() + pos_, m.data(), m.size()) != 0)
      throw FormatError(std::string(what) + ": bad magic");
    pos_ += m.size();
  }
  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::int32_t i32() { return scalar<std::int32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  std::int64_t i64() { return scalar<std::int64_t>(); }
  double f64() { return scalar<double>(); }
  void u64s(std::span<std::uint64_t> out) { raw(out.data(), out.size_bytes()); }
  void f64s(std::span<double> out) { raw(out.data(), out.size_bytes()); }
  Digest digest() {
    Digest d;
    raw(d.data(), d.size());
    return d;
  }
  Bytes blob() {
    const auto n = u64();
    need(n);
    Bytes b(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
            in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }
  Matrix matrix() {
    const std::size_t rows = u32();
    const std::size_t cols = u32();
    if (rows != 0 && cols > remaining() / 8 / rows) throw FormatError("matrix: truncated");
    Matrix m(rows, cols);
    f64s(m.data());
    return m;
  }

 private:
  template <typename T>
  T scalar() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  void need(std::size_t n) const {
    if (n > remaining()) throw FormatError("truncated input");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline Digest sha256(std::span<const std::uint8_t> data) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    throw Error("sha256 failed");
  }
  return out;
}

inline std::string to_hex(std::span<const std::uint8_t> data) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (auto b : data) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 15]);
  }
  return s;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw Error("short write to " + path);
}

inline Bytes read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace privlora
