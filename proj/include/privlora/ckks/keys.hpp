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
#include <map>
#include <set>
#include <vector>

#include "privlora/ckks/ring.hpp"

namespace privlora::ckks {

inline constexpr double kNoiseSigma = 3.2;

/// Ternary secret over the whole chain (data primes and P), NTT form.
struct SecretKey {
  RingElement s;
  Digest params_fp{};
};

/// RLWE pair (b, a) with b = -a*s + e over the data primes, NTT form.
struct PublicKey {
  RingElement b;
  RingElement a;
};

/// Key-switching key for one Galois element. digit i encrypts P * s(X^g)
/// on limb i only, so a ciphertext component decomposed into its RNS limbs
/// can be switched back to s with one digit per limb.
struct GaloisKey {
  long long step = 0;
  u64 galois_elt = 0;
  std::vector<RingElement> b;  // one per data prime, full chain limbs
  std::vector<RingElement> a;
};

/// Rotation keys indexed by the signed step they were requested for.
struct RotationKeys {
  std::map<long long, GaloisKey> keys;

  std::set<long long> steps() const {
    std::set<long long> out;
    for (const auto& [step, _] : keys) out.insert(step);
    return out;
  }
};

/// Everything the evaluating party needs. Holds no secret material.
struct EvaluationKeys {
  PublicKey pk;
  RotationKeys rotations;
  Digest params_fp{};
  Digest fingerprint{};

  /// Key for `step`, accepting any declared step with the same Galois element.
  const GaloisKey* find(const CkksContext& ctx, long long step) const {
    if (auto it = rotations.keys.find(step); it != rotations.keys.end()) return &it->second;
    const u64 g = ctx.galois_element(step);
    for (const auto& [_, key] : rotations.keys)
      if (key.galois_elt == g) return &key;
    return nullptr;
  }
};

struct KeyMaterial {
  SecretKey secret;
  EvaluationKeys eval;

  const Digest& fingerprint() const { return eval.fingerprint; }
};

/// SHA-256 over the public key and every rotation key, in step order.
inline Digest key_fingerprint(const EvaluationKeys& k) {
  Bytes buf;
  ByteWriter w(buf);
  w.digest(k.params_fp);
  w.u64s(k.pk.b.data);
  w.u64s(k.pk.a.data);
  for (const auto& [step, key] : k.rotations.keys) {
    w.i64(step);
    w.u64(key.galois_elt);
    for (std::size_t i = 0; i < key.b.size(); ++i) {
      w.u64s(key.b[i].data);
      w.u64s(key.a[i].data);
    }
  }
  return sha256(buf);
}

namespace detail {

inline RingElement noise_element(const CkksContext& ctx, std::size_t limbs, bool with_special, Rng& rng) {
  const auto e = sample_gaussian(ctx.n(), kNoiseSigma, rng);
  RingElement out = from_signed(ctx, e, limbs, with_special);
  to_ntt(ctx, out);
  return out;
}

inline GaloisKey make_galois_key(const CkksContext& ctx, const SecretKey& sk,
                                 const std::vector<std::int64_t>& s_coeffs, long long step, Rng& rng) {
  const std::size_t full = ctx.params().modulus_chain.size();
  const std::size_t data = ctx.max_level() + 1;
  GaloisKey key;
  key.step = step;
  key.galois_elt = ctx.galois_element(step);

  RingElement s_coeff = from_signed(ctx, s_coeffs, full);
  RingElement s_g = apply_galois(ctx, s_coeff, key.galois_elt);
  to_ntt(ctx, s_g);

  const u64 special = ctx.prime(ctx.special_index());
  for (std::size_t i = 0; i < data; ++i) {
    RingElement a = sample_uniform(ctx, full, false, rng);
    RingElement b = noise_element(ctx, full, false, rng);
    RingElement as = a;
    mul_inplace(ctx, as, sk.s);
    sub_inplace(ctx, b, as);
    const u64 qi = ctx.prime(i);
    const u64 p_mod = special % qi;
    auto bl = b.limb(i);
    auto sl = s_g.limb(i);
    for (std::size_t k = 0; k < ctx.n(); ++k) bl[k] = add_mod(bl[k], mul_mod(p_mod, sl[k], qi), qi);
    key.b.push_back(std::move(b));
    key.a.push_back(std::move(a));
  }
  return key;
}

}  // namespace detail

/// Generates a secret key, public key and rotation keys for exactly the
/// requested non-zero steps. Deterministic for a given RNG state.
inline KeyMaterial keygen(const CkksContext& ctx, const std::vector<long long>& rotation_steps, Rng& rng) {
  if (rotation_steps.empty()) throw ParameterError("keygen: rotation step set must be nonempty");
  const std::size_t full = ctx.params().modulus_chain.size();
  const std::size_t data = ctx.max_level() + 1;

  KeyMaterial km;
  const auto s_coeffs = sample_ternary(ctx.n(), rng);
  km.secret.s = from_signed(ctx, s_coeffs, full);
  to_ntt(ctx, km.secret.s);
  km.secret.params_fp = ctx.fingerprint();

  RingElement a = sample_uniform(ctx, data, false, rng);
  RingElement b = detail::noise_element(ctx, data, false, rng);
  RingElement as = a;
  mul_inplace(ctx, as, truncate_limbs(km.secret.s, data));
  sub_inplace(ctx, b, as);
  km.eval.pk = {std::move(b), std::move(a)};
  km.eval.params_fp = ctx.fingerprint();

  std::vector<long long> steps = rotation_steps;
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  for (long long step : steps) {
    if (step == 0) continue;
    km.eval.rotations.keys.emplace(step, detail::make_galois_key(ctx, km.secret, s_coeffs, step, rng));
  }
  km.eval.fingerprint = key_fingerprint(km.eval);
  return km;
}

}  // namespace privlora::ckks
