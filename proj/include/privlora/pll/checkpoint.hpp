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

#include <string>

#include "privlora/common/bytes.hpp"
#include "privlora/pll/pll.hpp"

namespace privlora::pll {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// PLLW checkpoint: magic, version, config, then A or (A1, A2), E' and s as
/// row-major f64 matrices.
inline void write_weights(ByteWriter& w, const PllWeights& pw) {
  const auto& c = pw.config;
  w.magic("PLLW");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.m));
  w.u32(static_cast<std::uint32_t>(c.n));
  w.u32(static_cast<std::uint32_t>(c.m_prime));
  w.u32(static_cast<std::uint32_t>(c.rank));
  w.u32(static_cast<std::uint32_t>(c.s_rows));
  w.f64(c.q);
  w.f64(c.gamma);
  w.f64(c.p_bern);
  w.f64(c.sigma_init);
  if (c.dense()) {
    w.matrix(pw.a);
  } else {
    w.matrix(pw.a1);
    w.matrix(pw.a2);
  }
  w.matrix(pw.e_prime);
  w.matrix(pw.s);
}

inline Bytes serialize_weights(const PllWeights& pw) {
  Bytes out;
  ByteWriter w(out);
  write_weights(w, pw);
  return out;
}

inline PllWeights read_weights(ByteReader& r) {
  r.expect_magic("PLLW", "PLL checkpoint");
  if (const auto v = r.u16(); v != kCheckpointVersion) {
    throw FormatError("PLL checkpoint: unsupported version " + std::to_string(v));
  }
  PllWeights pw;
  auto& c = pw.config;
  c.m = r.u32();
  c.n = r.u32();
  c.m_prime = r.u32();
  c.rank = r.u32();
  c.s_rows = r.u32();
  c.q = r.f64();
  c.gamma = r.f64();
  c.p_bern = r.f64();
  c.sigma_init = r.f64();
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("PLL checkpoint: ") + e.what());
  }
  // Empty matrices mark stripped weights that carry only the config.
  auto expect = [](const Matrix& mat, std::size_t rows, std::size_t cols, const char* name) {
    if (mat.empty()) return;
    if (mat.rows() != rows || mat.cols() != cols) throw FormatError(std::string("PLL checkpoint: bad shape for ") + name);
  };
  if (c.dense()) {
    pw.a = r.matrix();
    expect(pw.a, c.m, c.n, "A");
  } else {
    pw.a1 = r.matrix();
    pw.a2 = r.matrix();
    expect(pw.a1, c.m, c.rank, "A1");
    expect(pw.a2, c.rank, c.n, "A2");
  }
  pw.e_prime = r.matrix();
  expect(pw.e_prime, c.m_prime, c.n, "E'");
  pw.s = r.matrix();
  expect(pw.s, c.s_rows, c.m, "s");
  return pw;
}

inline PllWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  PllWeights pw = read_weights(r);
  if (!r.done()) throw FormatError("PLL checkpoint: trailing bytes");
  return pw;
}

}  // namespace privlora::pll
