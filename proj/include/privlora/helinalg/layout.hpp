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

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "privlora/common/bytes.hpp"
#include "privlora/common/error.hpp"

namespace privlora::helinalg {

/// Slot layout for a d x m input replicated r times per row.
///
/// Replica rho of row i occupies m_pad consecutive slots starting at
/// ((i_local * r) + rho) * m_pad, where i_local is the row index within its
/// ciphertext. Results come back strided: row i, column j lands in slot
/// (i_local * r) * m_pad + j.
struct PackLayout {
  std::uint32_t d = 0;
  std::uint32_t m = 0;
  std::uint32_t m_pad = 0;
  std::uint32_t rank = 0;  // unpadded LoRA rank
  std::uint32_t r = 0;     // rank padded to a power of two
  std::uint32_t n = 0;
  std::uint32_t rows_per_ct = 0;
  std::uint32_t ct_count = 0;

  static PackLayout make(std::size_t slots, std::size_t d, std::size_t m, std::size_t rank, std::size_t n) {
    if (d == 0 || m == 0 || rank == 0 || n == 0) throw DimensionError("layout dimensions must be positive");
    PackLayout l;
    l.d = static_cast<std::uint32_t>(d);
    l.m = static_cast<std::uint32_t>(m);
    l.m_pad = static_cast<std::uint32_t>(std::bit_ceil(m));
    l.rank = static_cast<std::uint32_t>(rank);
    l.r = static_cast<std::uint32_t>(std::bit_ceil(rank));
    l.n = static_cast<std::uint32_t>(n);
    if (n > l.m_pad) {
      throw DimensionError("output width " + std::to_string(n) + " exceeds padded input width " +
                           std::to_string(l.m_pad) + "; split the output across calls");
    }
    const std::size_t block = static_cast<std::size_t>(l.r) * l.m_pad;
    if (block > slots) {
      throw CapacityError("r * m_pad = " + std::to_string(block) + " exceeds " + std::to_string(slots) + " slots");
    }
    l.rows_per_ct = static_cast<std::uint32_t>(slots / block);
    l.ct_count = (l.d + l.rows_per_ct - 1) / l.rows_per_ct;
    return l;
  }

  std::size_t block() const { return static_cast<std::size_t>(r) * m_pad; }
  std::size_t slot(std::size_t i_local, std::size_t rho, std::size_t j) const {
    return (i_local * r + rho) * m_pad + j;
  }
  std::size_t result_slot(std::size_t i_local, std::size_t j) const { return slot(i_local, 0, j); }
  std::size_t rows_in(std::size_t chunk) const {
    const std::size_t begin = chunk * rows_per_ct;
    return std::min<std::size_t>(rows_per_ct, d - begin);
  }

  std::size_t log_m_pad() const { return static_cast<std::size_t>(std::countr_zero(m_pad)); }
  std::size_t log_r() const { return static_cast<std::size_t>(std::countr_zero(r)); }

  /// Rotations the kernel issues on each ciphertext.
  std::size_t rotations_per_ct() const { return 2 * log_m_pad() + log_r(); }

  /// Steps the kernel needs keys for: +2^j and -2^j below m_pad, and
  /// m_pad * 2^j below r.
  std::vector<long long> rotation_steps() const {
    std::vector<long long> out;
    for (std::size_t j = 0; j < log_m_pad(); ++j) {
      out.push_back(1LL << j);
      out.push_back(-(1LL << j));
    }
    for (std::size_t j = 0; j < log_r(); ++j) out.push_back(static_cast<long long>(m_pad) << j);
    return out;
  }

  void write(ByteWriter& w) const {
    for (std::uint32_t v : {d, m, m_pad, rank, r, n, rows_per_ct, ct_count}) w.u32(v);
  }

  /// Reads and re-derives the layout, rejecting inconsistent fields.
  static PackLayout read(ByteReader& rd, std::size_t slots) {
    PackLayout got;
    for (std::uint32_t* f : {&got.d, &got.m, &got.m_pad, &got.rank, &got.r, &got.n, &got.rows_per_ct, &got.ct_count})
      *f = rd.u32();
    PackLayout want;
    try {
      want = make(slots, got.d, got.m, got.rank, got.n);
    } catch (const Error& e) {
      throw FormatError(std::string("invalid layout: ") + e.what());
    }
    if (!(want == got)) throw FormatError("layout fields are inconsistent");
    return got;
  }

  friend bool operator==(const PackLayout&, const PackLayout&) = default;
};

/// Sorted union of the rotation steps for several layouts.
inline std::vector<long long> rotation_steps_for(const std::vector<PackLayout>& layouts) {
  std::vector<long long> out;
  for (const auto& l : layouts) {
    auto s = l.rotation_steps();
    out.insert(out.end(), s.begin(), s.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace privlora::helinalg
