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

#include <cmath>
#include <cstdint>
#include <vector>

#include "privlora/common/error.hpp"

namespace privlora::ckks {

using u64 = std::uint64_t;
using u128 = unsigned __int128;

inline u64 add_mod(u64 a, u64 b, u64 p) {
  const u64 s = a + b;
  return s >= p ? s - p : s;
}

inline u64 sub_mod(u64 a, u64 b, u64 p) { return a >= b ? a - b : a + p - b; }

inline u64 neg_mod(u64 a, u64 p) { return a == 0 ? 0 : p - a; }

inline u64 mul_mod(u64 a, u64 b, u64 p) { return static_cast<u64>(static_cast<u128>(a) * b % p); }

inline u64 pow_mod(u64 base, u64 exp, u64 p) {
  u64 result = 1 % p;
  base %= p;
  while (exp) {
    if (exp & 1) result = mul_mod(result, base, p);
    base = mul_mod(base, base, p);
    exp >>= 1;
  }
  return result;
}

/// p must be prime.
inline u64 inv_mod(u64 a, u64 p) {
  if (a % p == 0) throw ParameterError("inverse of zero");
  return pow_mod(a, p - 2, p);
}

/// Prime modulus with a precomputed Barrett ratio floor(2^128 / p), for
/// reducing full 128-bit products without a hardware division.
struct Modulus {
  u64 value = 0;
  u64 ratio_lo = 0;
  u64 ratio_hi = 0;

  Modulus() = default;
  explicit Modulus(u64 p) : value(p) {
    const u128 r = ~u128{0} / p;  // p odd, so equal to floor(2^128 / p)
    ratio_lo = static_cast<u64>(r);
    ratio_hi = static_cast<u64>(r >> 64);
  }

  u64 reduce(u128 x) const {
    const u64 lo = static_cast<u64>(x);
    const u64 hi = static_cast<u64>(x >> 64);
    const u64 carry = static_cast<u64>((static_cast<u128>(lo) * ratio_lo) >> 64);
    const u128 m = static_cast<u128>(lo) * ratio_hi + carry;
    const u64 t3 = static_cast<u64>(m >> 64);
    const u128 m2 = static_cast<u128>(hi) * ratio_lo + static_cast<u64>(m);
    const u64 q = hi * ratio_hi + t3 + static_cast<u64>(m2 >> 64);
    const u64 r = lo - q * value;
    return r >= value ? r - value : r;
  }

  u64 reduce(u64 x) const { return reduce(static_cast<u128>(x)); }
  u64 mul(u64 a, u64 b) const { return reduce(static_cast<u128>(a) * b); }
};

/// Constant multiplier with a precomputed Shoup quotient; needs p < 2^63.
struct ShoupConst {
  u64 value = 0;
  u64 quotient = 0;

  ShoupConst() = default;
  ShoupConst(u64 w, u64 p) : value(w), quotient(static_cast<u64>((static_cast<u128>(w) << 64) / p)) {}

  u64 mul(u64 a, u64 p) const {
    const u64 q = static_cast<u64>((static_cast<u128>(a) * quotient) >> 64);
    const u64 r = a * value - q * p;
    return r >= p ? r - p : r;
  }
};

/// Deterministic Miller-Rabin for 64-bit inputs.
inline bool is_prime(u64 n) {
  if (n < 2) return false;
  for (u64 p : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    if (n % p == 0) return n == p;
  }
  u64 d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  for (u64 a : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    u64 x = pow_mod(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int r = 1; r < s; ++r) {
      x = mul_mod(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

/// Distinct primes p = 1 (mod 2N), one per entry of `bit_sizes`, each the
/// largest such prime below 2^bits not already taken.
inline std::vector<u64> generate_ntt_primes(std::size_t ring_degree, const std::vector<int>& bit_sizes) {
  const u64 step = 2 * static_cast<u64>(ring_degree);
  std::vector<u64> out;
  for (int bits : bit_sizes) {
    if (bits < 20 || bits > 61) throw ParameterError("prime size must be in [20, 61] bits");
    u64 candidate = ((u64{1} << bits) / step) * step + 1;
    if (candidate >= (u64{1} << bits)) candidate -= step;
    for (;;) {
      if (candidate < step) throw ParameterError("ran out of NTT-friendly primes");
      bool taken = false;
      for (u64 p : out) taken |= (p == candidate);
      if (!taken && is_prime(candidate)) break;
      candidate -= step;
    }
    out.push_back(candidate);
  }
  return out;
}

/// Exact residue of round(x) modulo p for any finite double.
inline u64 reduce_rounded(double x, u64 p) {
  const double r = std::nearbyint(x);
  const bool neg = r < 0;
  const double a = std::fabs(r);
  u64 mag;
  if (a < 9.2e18) {
    mag = static_cast<u64>(a) % p;
  } else {
    int exp = 0;
    const double frac = std::frexp(a, &exp);  // a = frac * 2^exp, frac in [0.5, 1)
    const u64 mant = static_cast<u64>(std::ldexp(frac, 53));
    mag = mul_mod(mant % p, pow_mod(2, static_cast<u64>(exp - 53), p), p);
  }
  return neg ? neg_mod(mag, p) : mag;
}

}  // namespace privlora::ckks
