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
#include <string>

#include "privlora/ckks/encoder.hpp"
#include "privlora/ckks/keys.hpp"

namespace privlora::ckks {

/// Leveled CKKS ciphertext, both components in NTT form with level + 1 limbs.
struct Ciphertext {
  RingElement c0;
  RingElement c1;
  std::size_t level = 0;
  double scale = 1.0;
  Digest params_fp{};
};

/// Scales are carried as doubles and survive serialization as log2 values,
/// so equality is checked to a relative tolerance.
inline bool scales_match(double a, double b) { return std::fabs(a - b) <= 1e-9 * std::max(a, b); }

namespace detail {

inline void require_params(const CkksContext& ctx, const Digest& fp, const char* what) {
  if (fp != ctx.fingerprint()) throw KeyError(std::string(what) + ": parameter fingerprint mismatch");
}

inline void require_aligned(const Ciphertext& a, std::size_t level, double scale, const char* what) {
  if (a.level != level) {
    throw AlignmentError(std::string(what) + ": level mismatch (" + std::to_string(a.level) + " vs " +
                         std::to_string(level) + ")");
  }
  if (!scales_match(a.scale, scale)) {
    throw AlignmentError(std::string(what) + ": scale mismatch (2^" + std::to_string(std::log2(a.scale)) +
                         " vs 2^" + std::to_string(std::log2(scale)) + ")");
  }
}

/// Divides an NTT-form element by its top limb's prime (rounded) and drops
/// that limb. Used for rescale and for the key-switching mod-down by P.
inline RingElement divide_and_drop_top(const CkksContext& ctx, const RingElement& a) {
  const std::size_t top = a.limbs - 1;
  const std::size_t top_idx = a.prime_index(ctx, top);
  const u64 top_prime = ctx.prime(top_idx);
  std::vector<u64> last(a.limb(top).begin(), a.limb(top).end());
  ctx.ntt(top_idx).inverse(last);

  RingElement out(a.n, top, true);
  std::vector<u64> tmp(a.n);
  const u64 half = top_prime / 2;
  for (std::size_t j = 0; j < top; ++j) {
    const u64 qj = ctx.prime(j);
    const Modulus& mod = ctx.modulus(j);
    // Centered lift of the dropped limb into q_j.
    const u64 top_mod_qj = mod.reduce(top_prime);
    for (std::size_t k = 0; k < a.n; ++k) {
      const u64 v = mod.reduce(last[k]);
      tmp[k] = last[k] > half ? sub_mod(v, top_mod_qj, qj) : v;
    }
    ctx.ntt(j).forward(tmp);
    const ShoupConst inv(ctx.inv_prime_mod(top_idx, j), qj);
    auto src = a.limb(j);
    auto dst = out.limb(j);
    for (std::size_t k = 0; k < a.n; ++k) dst[k] = inv.mul(sub_mod(src[k], tmp[k], qj), qj);
  }
  return out;
}

/// Switches a coefficient-form component c (keyed under s(X^g)) back to s.
/// Returns (u0, u1) in NTT form at c's limb count, so that
/// u0 + u1*s ~= c * s(X^g).
inline std::pair<RingElement, RingElement> key_switch(const CkksContext& ctx, const RingElement& c,
                                                      const GaloisKey& key) {
  const std::size_t l = c.limbs;  // data limbs at this level
  RingElement acc0(c.n, l + 1, true, true);
  RingElement acc1(c.n, l + 1, true, true);
  std::vector<u64> digit(c.n);
  for (std::size_t i = 0; i < l; ++i) {
    const auto src = c.limb(i);
    for (std::size_t t = 0; t <= l; ++t) {
      const std::size_t pidx = acc0.prime_index(ctx, t);
      const Modulus& mod = ctx.modulus(pidx);
      const u64 p = mod.value;
      if (pidx == i) {
        std::copy(src.begin(), src.end(), digit.begin());
      } else {
        for (std::size_t k = 0; k < c.n; ++k) digit[k] = mod.reduce(src[k]);
      }
      ctx.ntt(pidx).forward(digit);
      const auto kb = key.b[i].limb(pidx);
      const auto ka = key.a[i].limb(pidx);
      auto d0 = acc0.limb(t);
      auto d1 = acc1.limb(t);
      for (std::size_t k = 0; k < c.n; ++k) {
        d0[k] = add_mod(d0[k], mod.mul(digit[k], kb[k]), p);
        d1[k] = add_mod(d1[k], mod.mul(digit[k], ka[k]), p);
      }
    }
  }
  return {divide_and_drop_top(ctx, acc0), divide_and_drop_top(ctx, acc1)};
}

}  // namespace detail

inline Ciphertext encrypt(const CkksContext& ctx, const PlaintextOperand& pt, const EvaluationKeys& keys, Rng& rng) {
  detail::require_params(ctx, pt.params_fp, "encrypt");
  detail::require_params(ctx, keys.params_fp, "encrypt");
  const std::size_t limbs = pt.level + 1;
  RingElement u = from_signed(ctx, sample_ternary(ctx.n(), rng), limbs);
  to_ntt(ctx, u);
  Ciphertext ct;
  ct.c0 = detail::noise_element(ctx, limbs, false, rng);
  ct.c1 = detail::noise_element(ctx, limbs, false, rng);
  mul_add_inplace(ctx, ct.c0, truncate_limbs(keys.pk.b, limbs), u);
  mul_add_inplace(ctx, ct.c1, truncate_limbs(keys.pk.a, limbs), u);
  add_inplace(ctx, ct.c0, pt.poly);
  ct.level = pt.level;
  ct.scale = pt.scale;
  ct.params_fp = ctx.fingerprint();
  return ct;
}

inline PlaintextOperand decrypt(const CkksContext& ctx, const Ciphertext& ct, const SecretKey& sk) {
  detail::require_params(ctx, ct.params_fp, "decrypt");
  detail::require_params(ctx, sk.params_fp, "decrypt");
  const std::size_t limbs = ct.level + 1;
  PlaintextOperand pt;
  pt.poly = ct.c0;
  mul_add_inplace(ctx, pt.poly, ct.c1, truncate_limbs(sk.s, limbs));
  pt.level = ct.level;
  pt.scale = ct.scale;
  pt.params_fp = ctx.fingerprint();
  return pt;
}

inline Ciphertext add(const CkksContext& ctx, const Ciphertext& a, const Ciphertext& b) {
  detail::require_params(ctx, a.params_fp, "add");
  detail::require_params(ctx, b.params_fp, "add");
  detail::require_aligned(a, b.level, b.scale, "add");
  Ciphertext out = a;
  add_inplace(ctx, out.c0, b.c0);
  add_inplace(ctx, out.c1, b.c1);
  return out;
}

inline Ciphertext add_plain(const CkksContext& ctx, const Ciphertext& a, const PlaintextOperand& pt) {
  detail::require_params(ctx, a.params_fp, "add_plain");
  detail::require_params(ctx, pt.params_fp, "add_plain");
  detail::require_aligned(a, pt.level, pt.scale, "add_plain");
  Ciphertext out = a;
  add_inplace(ctx, out.c0, pt.poly);
  return out;
}

/// Slotwise product with a plaintext at the same level. The result scale is
/// the product of the two scales; follow with rescale().
inline Ciphertext cmult_plain(const CkksContext& ctx, const Ciphertext& a, const PlaintextOperand& pt) {
  detail::require_params(ctx, a.params_fp, "cmult_plain");
  detail::require_params(ctx, pt.params_fp, "cmult_plain");
  if (a.level != pt.level) {
    throw AlignmentError("cmult_plain: plaintext encoded for level " + std::to_string(pt.level) +
                         ", ciphertext at level " + std::to_string(a.level));
  }
  Ciphertext out = a;
  mul_inplace(ctx, out.c0, pt.poly);
  mul_inplace(ctx, out.c1, pt.poly);
  out.scale = a.scale * pt.scale;
  return out;
}

/// Divides by the top data prime q_level and drops one level.
inline Ciphertext rescale(const CkksContext& ctx, const Ciphertext& a) {
  detail::require_params(ctx, a.params_fp, "rescale");
  if (a.level == 0) throw LevelError("rescale: ciphertext is already at level 0");
  Ciphertext out;
  out.c0 = detail::divide_and_drop_top(ctx, a.c0);
  out.c1 = detail::divide_and_drop_top(ctx, a.c1);
  out.level = a.level - 1;
  out.scale = a.scale / static_cast<double>(ctx.prime(a.level));
  out.params_fp = a.params_fp;
  return out;
}

/// Left rotation: slot i of the result holds slot (i + step) mod slots of the input.
inline Ciphertext rotate(const CkksContext& ctx, const Ciphertext& a, long long step, const EvaluationKeys& keys) {
  detail::require_params(ctx, a.params_fp, "rotate");
  detail::require_params(ctx, keys.params_fp, "rotate");
  if (ctx.galois_element(step) == 1) return a;
  const GaloisKey* key = keys.find(ctx, step);
  if (key == nullptr) throw KeyError("rotate: no rotation key for step " + std::to_string(step));

  RingElement c0 = a.c0;
  RingElement c1 = a.c1;
  from_ntt(ctx, c0);
  from_ntt(ctx, c1);
  RingElement r0 = apply_galois(ctx, c0, key->galois_elt);
  RingElement r1 = apply_galois(ctx, c1, key->galois_elt);
  auto [u0, u1] = detail::key_switch(ctx, r1, *key);
  to_ntt(ctx, r0);
  add_inplace(ctx, u0, r0);

  Ciphertext out;
  out.c0 = std::move(u0);
  out.c1 = std::move(u1);
  out.level = a.level;
  out.scale = a.scale;
  out.params_fp = a.params_fp;
  return out;
}

/// Convenience: encode + encrypt of real values at the top level and default scale.
inline Ciphertext encrypt_values(const CkksContext& ctx, std::span<const double> values, const EvaluationKeys& keys,
                                 Rng& rng) {
  return encrypt(ctx, encode(ctx, values, ctx.max_level(), ctx.params().default_scale()), keys, rng);
}

inline std::vector<double> decrypt_values(const CkksContext& ctx, const Ciphertext& ct, const SecretKey& sk) {
  return decode_real(ctx, decrypt(ctx, ct, sk));
}

}  // namespace privlora::ckks
