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
#include <random>
#include <span>
#include <vector>

#include "privlora/ckks/params.hpp"
#include "privlora/common/rng.hpp"

namespace privlora::ckks {

/// Element of R_Q = Z_Q[X]/(X^N+1) in RNS form. Limb i is reduced modulo
/// chain prime i, except when `special` is set: then the last limb belongs
/// to the key-switching prime P instead of q_{limbs-1}.
struct RingElement {
  std::size_t n = 0;
  std::size_t limbs = 0;
  bool ntt = false;
  bool special = false;
  std::vector<u64> data;

  RingElement() = default;
  RingElement(std::size_t degree, std::size_t limb_count, bool ntt_form, bool with_special = false)
      : n(degree), limbs(limb_count), ntt(ntt_form), special(with_special), data(degree * limb_count, 0) {}

  std::span<u64> limb(std::size_t i) { return {data.data() + i * n, n}; }
  std::span<const u64> limb(std::size_t i) const { return {data.data() + i * n, n}; }

  /// Chain index of the prime for limb i.
  std::size_t prime_index(const CkksContext& ctx, std::size_t i) const {
    return (special && i + 1 == limbs) ? ctx.special_index() : i;
  }

  friend bool operator==(const RingElement&, const RingElement&) = default;
};

inline void to_ntt(const CkksContext& ctx, RingElement& a) {
  if (a.ntt) return;
  for (std::size_t i = 0; i < a.limbs; ++i) ctx.ntt(a.prime_index(ctx, i)).forward(a.limb(i));
  a.ntt = true;
}

inline void from_ntt(const CkksContext& ctx, RingElement& a) {
  if (!a.ntt) return;
  for (std::size_t i = 0; i < a.limbs; ++i) ctx.ntt(a.prime_index(ctx, i)).inverse(a.limb(i));
  a.ntt = false;
}

inline void require_compatible(const RingElement& a, const RingElement& b) {
  if (a.n != b.n || a.limbs != b.limbs || a.ntt != b.ntt || a.special != b.special) {
    throw AlignmentError("ring elements differ in degree, limb count or representation");
  }
}

inline void add_inplace(const CkksContext& ctx, RingElement& a, const RingElement& b) {
  require_compatible(a, b);
  for (std::size_t i = 0; i < a.limbs; ++i) {
    const u64 p = ctx.prime(a.prime_index(ctx, i));
    auto x = a.limb(i);
    auto y = b.limb(i);
    for (std::size_t k = 0; k < a.n; ++k) x[k] = add_mod(x[k], y[k], p);
  }
}

inline void sub_inplace(const CkksContext& ctx, RingElement& a, const RingElement& b) {
  require_compatible(a, b);
  for (std::size_t i = 0; i < a.limbs; ++i) {
    const u64 p = ctx.prime(a.prime_index(ctx, i));
    auto x = a.limb(i);
    auto y = b.limb(i);
    for (std::size_t k = 0; k < a.n; ++k) x[k] = sub_mod(x[k], y[k], p);
  }
}

inline void negate_inplace(const CkksContext& ctx, RingElement& a) {
  for (std::size_t i = 0; i < a.limbs; ++i) {
    const u64 p = ctx.prime(a.prime_index(ctx, i));
    for (auto& x : a.limb(i)) x = neg_mod(x, p);
  }
}

/// Pointwise product; both operands must be in NTT form.
inline void mul_inplace(const CkksContext& ctx, RingElement& a, const RingElement& b) {
  require_compatible(a, b);
  if (!a.ntt) throw AlignmentError("ring multiplication requires NTT form");
  for (std::size_t i = 0; i < a.limbs; ++i) {
    const Modulus& mod = ctx.modulus(a.prime_index(ctx, i));
    auto x = a.limb(i);
    auto y = b.limb(i);
    for (std::size_t k = 0; k < a.n; ++k) x[k] = mod.mul(x[k], y[k]);
  }
}

/// a += b * c, NTT form.
inline void mul_add_inplace(const CkksContext& ctx, RingElement& a, const RingElement& b, const RingElement& c) {
  require_compatible(a, b);
  require_compatible(b, c);
  for (std::size_t i = 0; i < a.limbs; ++i) {
    const Modulus& mod = ctx.modulus(a.prime_index(ctx, i));
    auto x = a.limb(i);
    auto y = b.limb(i);
    auto z = c.limb(i);
    for (std::size_t k = 0; k < a.n; ++k) x[k] = add_mod(x[k], mod.mul(y[k], z[k]), mod.value);
  }
}

/// Keeps only the first `limbs` limbs (no special limb).
inline RingElement truncate_limbs(const RingElement& a, std::size_t limbs) {
  if (limbs > a.limbs) throw LevelError("cannot extend a ring element");
  RingElement out(a.n, limbs, a.ntt);
  std::copy(a.data.begin(), a.data.begin() + static_cast<std::ptrdiff_t>(limbs * a.n), out.data.begin());
  return out;
}

/// Lifts a vector of small signed coefficients into the requested limbs
/// (coefficient form).
inline RingElement from_signed(const CkksContext& ctx, std::span<const std::int64_t> coeffs, std::size_t limbs,
                               bool with_special = false) {
  RingElement out(ctx.n(), limbs, false, with_special);
  for (std::size_t i = 0; i < limbs; ++i) {
    const u64 p = ctx.prime(out.prime_index(ctx, i));
    auto l = out.limb(i);
    for (std::size_t k = 0; k < ctx.n(); ++k) {
      const std::int64_t c = coeffs[k];
      l[k] = c >= 0 ? static_cast<u64>(c) % p : neg_mod(static_cast<u64>(-c) % p, p);
    }
  }
  return out;
}

inline std::vector<std::int64_t> sample_ternary(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<int> dist(-1, 1);
  std::vector<std::int64_t> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

/// Rounded Gaussian with standard deviation sigma, clipped at 6 sigma.
inline std::vector<std::int64_t> sample_gaussian(std::size_t n, double sigma, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<std::int64_t> out(n);
  const double bound = 6.0 * sigma;
  for (auto& v : out) {
    double x;
    do {
      x = dist(rng);
    } while (std::fabs(x) > bound);
    v = static_cast<std::int64_t>(std::llround(x));
  }
  return out;
}

inline RingElement sample_uniform(const CkksContext& ctx, std::size_t limbs, bool with_special, Rng& rng) {
  RingElement out(ctx.n(), limbs, true, with_special);
  for (std::size_t i = 0; i < limbs; ++i) {
    std::uniform_int_distribution<u64> dist(0, ctx.prime(out.prime_index(ctx, i)) - 1);
    for (auto& x : out.limb(i)) x = dist(rng);
  }
  return out;
}

/// Applies X -> X^g to a coefficient-form element.
inline RingElement apply_galois(const CkksContext& ctx, const RingElement& a, u64 g) {
  if (a.ntt) throw AlignmentError("galois automorphism expects coefficient form");
  const std::size_t n = a.n;
  const u64 m = 2 * n;
  RingElement out(n, a.limbs, false, a.special);
  for (std::size_t i = 0; i < a.limbs; ++i) {
    const u64 p = ctx.prime(a.prime_index(ctx, i));
    auto src = a.limb(i);
    auto dst = out.limb(i);
    for (std::size_t k = 0; k < n; ++k) {
      const u64 idx = (static_cast<u64>(k) * g) % m;
      if (idx < n) {
        dst[idx] = src[k];
      } else {
        dst[idx - n] = neg_mod(src[k], p);
      }
    }
  }
  return out;
}

}  // namespace privlora::ckks
