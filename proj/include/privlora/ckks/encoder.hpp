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
#include <complex>
#include <span>
#include <vector>

#include "privlora/ckks/ring.hpp"

namespace privlora::ckks {

using Complex = std::complex<double>;

/// Encoded message: a ring element plus the level and scale it targets.
struct PlaintextOperand {
  RingElement poly;  // NTT form, level + 1 limbs
  std::size_t level = 0;
  double scale = 1.0;
  Digest params_fp{};
};

namespace detail {

inline void bit_reverse_permute(std::vector<Complex>& v) {
  const std::size_t n = v.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(v[i], v[j]);
  }
}

// Evaluates the slot vector from coefficient pairs: v[j] <- m(zeta^{5^j}).
inline void special_fft(const CkksContext& ctx, std::vector<Complex>& v) {
  const std::size_t n = v.size();
  const std::size_t m = 2 * ctx.n();
  const auto& rot = ctx.rotation_group();
  const auto& roots = ctx.roots();
  bit_reverse_permute(v);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t lenh = len >> 1;
    const std::size_t lenq = len << 2;
    const std::size_t gap = m / lenq;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < lenh; ++j) {
        const std::size_t idx = (rot[j] % lenq) * gap;
        const Complex u = v[i + j];
        const Complex w = v[i + j + lenh] * roots[idx];
        v[i + j] = u + w;
        v[i + j + lenh] = u - w;
      }
    }
  }
}

inline void special_ifft(const CkksContext& ctx, std::vector<Complex>& v) {
  const std::size_t n = v.size();
  const std::size_t m = 2 * ctx.n();
  const auto& rot = ctx.rotation_group();
  const auto& roots = ctx.roots();
  for (std::size_t len = n; len >= 2; len >>= 1) {
    const std::size_t lenh = len >> 1;
    const std::size_t lenq = len << 2;
    const std::size_t gap = m / lenq;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < lenh; ++j) {
        const std::size_t idx = (lenq - (rot[j] % lenq)) * gap;
        const Complex u = v[i + j] + v[i + j + lenh];
        const Complex w = (v[i + j] - v[i + j + lenh]) * roots[idx];
        v[i + j] = u;
        v[i + j + lenh] = w;
      }
    }
  }
  bit_reverse_permute(v);
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& x : v) x *= inv;
}

}  // namespace detail

/// Centered integer value of every coefficient, reconstructed by Garner's
/// mixed-radix CRT. The element must be in coefficient form without a
/// special limb.
inline std::vector<long double> centered_coefficients(const CkksContext& ctx, const RingElement& a) {
  if (a.ntt || a.special) throw AlignmentError("centered_coefficients expects plain coefficient form");
  const std::size_t l = a.limbs;
  std::vector<long double> out(a.n);
  std::vector<long double> weight(l);
  long double total = 1.0L;
  for (std::size_t i = 0; i < l; ++i) {
    weight[i] = total;
    total *= static_cast<long double>(ctx.prime(i));
  }
  std::vector<u64> digits(l), neg_digits(l);
  auto garner = [&](std::vector<u64>& v) {
    for (std::size_t i = 1; i < l; ++i) {
      const u64 p = ctx.prime(i);
      for (std::size_t j = 0; j < i; ++j) {
        v[i] = mul_mod(sub_mod(v[i], v[j] % p, p), ctx.inv_prime_mod(j, i), p);
      }
    }
    long double x = 0.0L;
    for (std::size_t i = l; i-- > 0;) x += static_cast<long double>(v[i]) * weight[i];
    return x;
  };
  for (std::size_t k = 0; k < a.n; ++k) {
    for (std::size_t i = 0; i < l; ++i) {
      digits[i] = a.limb(i)[k];
      neg_digits[i] = neg_mod(digits[i], ctx.prime(i));
    }
    const long double pos = garner(digits);
    out[k] = pos <= total / 2 ? pos : -garner(neg_digits);
  }
  return out;
}

/// Encodes up to slot_count complex values at the given level and scale.
inline PlaintextOperand encode(const CkksContext& ctx, std::span<const Complex> values, std::size_t level,
                               double scale) {
  const std::size_t slots = ctx.slots();
  if (values.size() > slots) {
    throw CapacityError("encode: " + std::to_string(values.size()) + " values exceed " + std::to_string(slots) +
                        " slots");
  }
  if (level > ctx.max_level()) throw LevelError("encode: level above the top of the chain");
  if (!(scale > 0) || !std::isfinite(scale)) throw ParameterError("encode: scale must be positive");
  std::vector<Complex> v(slots, Complex{});
  std::copy(values.begin(), values.end(), v.begin());
  detail::special_ifft(ctx, v);
  RingElement poly(ctx.n(), level + 1, false);
  for (std::size_t i = 0; i <= level; ++i) {
    const u64 p = ctx.prime(i);
    auto limb = poly.limb(i);
    for (std::size_t k = 0; k < slots; ++k) {
      limb[k] = reduce_rounded(v[k].real() * scale, p);
      limb[k + slots] = reduce_rounded(v[k].imag() * scale, p);
    }
  }
  to_ntt(ctx, poly);
  return {std::move(poly), level, scale, ctx.fingerprint()};
}

inline PlaintextOperand encode(const CkksContext& ctx, std::span<const double> values, std::size_t level,
                               double scale) {
  std::vector<Complex> c(values.begin(), values.end());
  return encode(ctx, std::span<const Complex>(c), level, scale);
}

/// Same value in every slot.
inline PlaintextOperand encode_constant(const CkksContext& ctx, double value, std::size_t level, double scale) {
  std::vector<double> v(ctx.slots(), value);
  return encode(ctx, std::span<const double>(v), level, scale);
}

inline std::vector<Complex> decode(const CkksContext& ctx, const PlaintextOperand& pt) {
  if (pt.params_fp != ctx.fingerprint()) throw KeyError("decode: plaintext belongs to another parameter set");
  RingElement poly = pt.poly;
  from_ntt(ctx, poly);
  const auto coeffs = centered_coefficients(ctx, poly);
  const std::size_t slots = ctx.slots();
  std::vector<Complex> v(slots);
  const long double inv = 1.0L / static_cast<long double>(pt.scale);
  for (std::size_t k = 0; k < slots; ++k) {
    v[k] = {static_cast<double>(coeffs[k] * inv), static_cast<double>(coeffs[k + slots] * inv)};
  }
  detail::special_fft(ctx, v);
  return v;
}

inline std::vector<double> decode_real(const CkksContext& ctx, const PlaintextOperand& pt) {
  const auto c = decode(ctx, pt);
  std::vector<double> out(c.size());
  std::transform(c.begin(), c.end(), out.begin(), [](const Complex& z) { return z.real(); });
  return out;
}

}  // namespace privlora::ckks
