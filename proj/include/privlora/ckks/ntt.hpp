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

#include <bit>
#include <span>
#include <vector>

#include "privlora/ckks/modarith.hpp"

namespace privlora::ckks {

/// Negacyclic NTT over Z_p[X]/(X^N + 1).
///
/// Forward transform is Cooley-Tukey with the powers of a primitive 2N-th
/// root psi stored in bit-reversed order; output is in bit-reversed order.
/// The inverse is Gentleman-Sande and consumes that order, so pointwise
/// products in the transformed domain are negacyclic convolutions.
class NttTables {
 public:
  NttTables(std::size_t n, u64 p) : n_(n), p_(p) {
    if (!std::has_single_bit(n) || n < 2) throw ParameterError("NTT size must be a power of two");
    if ((p - 1) % (2 * n) != 0) throw ParameterError("prime is not 1 mod 2N");
    const u64 psi = find_psi();
    const u64 psi_inv = inv_mod(psi, p);
    const int logn = std::countr_zero(n);
    psi_rev_.resize(n);
    psi_inv_rev_.resize(n);
    u64 pw = 1;
    u64 pw_inv = 1;
    std::vector<u64> pows(n), pows_inv(n);
    for (std::size_t i = 0; i < n; ++i) {
      pows[i] = pw;
      pows_inv[i] = pw_inv;
      pw = mul_mod(pw, psi, p);
      pw_inv = mul_mod(pw_inv, psi_inv, p);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = bit_reverse(i, logn);
      psi_rev_[i] = ShoupConst(pows[r], p);
      psi_inv_rev_[i] = ShoupConst(pows_inv[r], p);
    }
    n_inv_ = ShoupConst(inv_mod(n % p, p), p);
    psi_ = psi;
  }

  std::size_t size() const { return n_; }
  u64 modulus() const { return p_; }
  u64 psi() const { return psi_; }

  void forward(std::span<u64> a) const {
    std::size_t t = n_;
    for (std::size_t m = 1; m < n_; m <<= 1) {
      t >>= 1;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j1 = 2 * i * t;
        const ShoupConst& s = psi_rev_[m + i];
        for (std::size_t j = j1; j < j1 + t; ++j) {
          const u64 u = a[j];
          const u64 v = s.mul(a[j + t], p_);
          a[j] = add_mod(u, v, p_);
          a[j + t] = sub_mod(u, v, p_);
        }
      }
    }
  }

  void inverse(std::span<u64> a) const {
    std::size_t t = 1;
    for (std::size_t m = n_; m > 1; m >>= 1) {
      const std::size_t h = m >> 1;
      std::size_t j1 = 0;
      for (std::size_t i = 0; i < h; ++i) {
        const ShoupConst& s = psi_inv_rev_[h + i];
        for (std::size_t j = j1; j < j1 + t; ++j) {
          const u64 u = a[j];
          const u64 v = a[j + t];
          a[j] = add_mod(u, v, p_);
          a[j + t] = s.mul(sub_mod(u, v, p_), p_);
        }
        j1 += 2 * t;
      }
      t <<= 1;
    }
    for (auto& x : a) x = n_inv_.mul(x, p_);
  }

 private:
  static std::size_t bit_reverse(std::size_t x, int bits) {
    std::size_t r = 0;
    for (int i = 0; i < bits; ++i) {
      r = (r << 1) | (x & 1);
      x >>= 1;
    }
    return r;
  }

  // Smallest-base primitive 2N-th root, so tables are reproducible.
  u64 find_psi() const {
    const u64 exp = (p_ - 1) / (2 * n_);
    for (u64 g = 2; g < p_; ++g) {
      const u64 cand = pow_mod(g, exp, p_);
      if (pow_mod(cand, n_, p_) == p_ - 1) return cand;
    }
    throw ParameterError("no primitive 2N-th root of unity");
  }

  std::size_t n_;
  u64 p_;
  u64 psi_ = 0;
  std::vector<ShoupConst> psi_rev_;
  std::vector<ShoupConst> psi_inv_rev_;
  ShoupConst n_inv_;
};

}  // namespace privlora::ckks
