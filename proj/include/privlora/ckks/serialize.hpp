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

// Binary object format shared by key files and the wire protocol.
//
//   "CKL1" | tag u8 | params fingerprint [32] | level u32 | log2(scale) f64 | body
//
// All integers little-endian. Ring elements are written limb by limb as u64
// residues in NTT form. Bodies:
//   params      u32 N, u32 prime count, u64 primes..., f64 scale bits
//   plaintext   (level+1) limbs
//   ciphertext  c0 then c1, (level+1) limbs each
//   public key  b then a, (L+1) limbs each
//   secret key  s, L+2 limbs
//   rotations   u32 count, then per key: i64 step, u64 galois element,
//               and for each of the L+1 digits b then a with L+2 limbs

#pragma once

#include <cmath>
#include <string>

#include "privlora/ckks/evaluator.hpp"
#include "privlora/common/bytes.hpp"

namespace privlora::ckks {

inline constexpr std::string_view kObjectMagic = "CKL1";

enum class ObjectTag : std::uint8_t {
  kParams = 1,
  kPlaintext = 2,
  kCiphertext = 3,
  kPublicKey = 4,
  kSecretKey = 5,
  kRotationKeys = 6,
};

struct ObjectHeader {
  ObjectTag tag{};
  Digest params_fp{};
  std::uint32_t level = 0;
  double scale = 1.0;
};

namespace detail {

inline void write_header(ByteWriter& w, ObjectTag tag, const Digest& fp, std::size_t level, double scale) {
  w.magic(kObjectMagic);
  w.u8(static_cast<std::uint8_t>(tag));
  w.digest(fp);
  w.u32(static_cast<std::uint32_t>(level));
  w.f64(std::log2(scale));
}

inline ObjectHeader read_header(ByteReader& r, ObjectTag expected) {
  r.expect_magic(kObjectMagic, "ckks object");
  ObjectHeader h;
  h.tag = static_cast<ObjectTag>(r.u8());
  if (h.tag != expected) {
    throw FormatError("ckks object: expected tag " + std::to_string(static_cast<int>(expected)) + ", got " +
                      std::to_string(static_cast<int>(h.tag)));
  }
  h.params_fp = r.digest();
  h.level = r.u32();
  const double e = r.f64();
  if (!std::isfinite(e)) throw FormatError("ckks object: non-finite scale exponent");
  h.scale = std::exp2(e);
  return h;
}

inline void check_fp(const CkksContext& ctx, const ObjectHeader& h) {
  if (h.params_fp != ctx.fingerprint()) throw KeyError("ckks object: parameter fingerprint mismatch");
}

inline void write_ring(ByteWriter& w, const RingElement& a) { w.u64s(a.data); }

inline RingElement read_ring(const CkksContext& ctx, ByteReader& r, std::size_t limbs, bool with_special) {
  if (r.remaining() / 8 / ctx.n() < limbs) throw FormatError("ckks object: truncated ring element");
  RingElement a(ctx.n(), limbs, true, with_special);
  r.u64s(a.data);
  for (std::size_t i = 0; i < limbs; ++i) {
    const u64 p = ctx.prime(a.prime_index(ctx, i));
    for (u64 v : a.limb(i))
      if (v >= p) throw FormatError("ckks object: residue out of range");
  }
  return a;
}

inline void require_end(const ByteReader& r) {
  if (!r.done()) throw FormatError("ckks object: trailing bytes");
}

}  // namespace detail

inline Bytes serialize(const CkksParams& p) {
  Bytes out;
  ByteWriter w(out);
  detail::write_header(w, ObjectTag::kParams, p.fingerprint(), p.max_level(), std::exp2(p.scale_bits));
  const Bytes body = p.body_bytes();
  w.raw(body.data(), body.size());
  return out;
}

/// Parameters are self-describing; the embedded fingerprint must match the body.
inline CkksParams deserialize_params(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto h = detail::read_header(r, ObjectTag::kParams);
  CkksParams p;
  p.ring_degree = r.u32();
  const std::size_t count = r.u32();
  if (count > 64) throw FormatError("params: implausible chain length");
  p.modulus_chain.resize(count);
  r.u64s(p.modulus_chain);
  p.scale_bits = r.f64();
  detail::require_end(r);
  if (p.fingerprint() != h.params_fp) throw KeyError("params: fingerprint does not match body");
  p.validate();
  return p;
}

inline Bytes serialize(const PlaintextOperand& pt) {
  Bytes out;
  ByteWriter w(out);
  detail::write_header(w, ObjectTag::kPlaintext, pt.params_fp, pt.level, pt.scale);
  detail::write_ring(w, pt.poly);
  return out;
}

inline PlaintextOperand deserialize_plaintext(const CkksContext& ctx, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto h = detail::read_header(r, ObjectTag::kPlaintext);
  detail::check_fp(ctx, h);
  if (h.level > ctx.max_level()) throw FormatError("plaintext: level out of range");
  PlaintextOperand pt;
  pt.poly = detail::read_ring(ctx, r, h.level + 1, false);
  pt.level = h.level;
  pt.scale = h.scale;
  pt.params_fp = h.params_fp;
  detail::require_end(r);
  return pt;
}

inline void write_ciphertext(ByteWriter& w, const Ciphertext& ct) {
  detail::write_header(w, ObjectTag::kCiphertext, ct.params_fp, ct.level, ct.scale);
  detail::write_ring(w, ct.c0);
  detail::write_ring(w, ct.c1);
}

inline Bytes serialize(const Ciphertext& ct) {
  Bytes out;
  out.reserve(45 + ct.c0.data.size() * 16);
  ByteWriter w(out);
  write_ciphertext(w, ct);
  return out;
}

inline Ciphertext read_ciphertext(const CkksContext& ctx, ByteReader& r) {
  const auto h = detail::read_header(r, ObjectTag::kCiphertext);
  detail::check_fp(ctx, h);
  if (h.level > ctx.max_level()) throw FormatError("ciphertext: level out of range");
  if (!(h.scale > 0)) throw FormatError("ciphertext: non-positive scale");
  Ciphertext ct;
  ct.c0 = detail::read_ring(ctx, r, h.level + 1, false);
  ct.c1 = detail::read_ring(ctx, r, h.level + 1, false);
  ct.level = h.level;
  ct.scale = h.scale;
  ct.params_fp = h.params_fp;
  return ct;
}

inline Ciphertext deserialize_ciphertext(const CkksContext& ctx, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto ct = read_ciphertext(ctx, r);
  detail::require_end(r);
  return ct;
}

inline Bytes serialize(const PublicKey& pk, const Digest& params_fp) {
  Bytes out;
  ByteWriter w(out);
  detail::write_header(w, ObjectTag::kPublicKey, params_fp, pk.b.limbs - 1, 1.0);
  detail::write_ring(w, pk.b);
  detail::write_ring(w, pk.a);
  return out;
}

inline PublicKey deserialize_public_key(const CkksContext& ctx, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto h = detail::read_header(r, ObjectTag::kPublicKey);
  detail::check_fp(ctx, h);
  if (h.level != ctx.max_level()) throw FormatError("public key: wrong level");
  PublicKey pk;
  pk.b = detail::read_ring(ctx, r, h.level + 1, false);
  pk.a = detail::read_ring(ctx, r, h.level + 1, false);
  detail::require_end(r);
  return pk;
}

inline Bytes serialize(const SecretKey& sk) {
  Bytes out;
  ByteWriter w(out);
  detail::write_header(w, ObjectTag::kSecretKey, sk.params_fp, sk.s.limbs - 2, 1.0);
  detail::write_ring(w, sk.s);
  return out;
}

inline SecretKey deserialize_secret_key(const CkksContext& ctx, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto h = detail::read_header(r, ObjectTag::kSecretKey);
  detail::check_fp(ctx, h);
  if (h.level != ctx.max_level()) throw FormatError("secret key: wrong level");
  SecretKey sk;
  sk.s = detail::read_ring(ctx, r, h.level + 2, false);
  sk.params_fp = h.params_fp;
  detail::require_end(r);
  return sk;
}

inline Bytes serialize(const RotationKeys& keys, const Digest& params_fp, std::size_t max_level) {
  Bytes out;
  ByteWriter w(out);
  detail::write_header(w, ObjectTag::kRotationKeys, params_fp, max_level, 1.0);
  w.u32(static_cast<std::uint32_t>(keys.keys.size()));
  for (const auto& [step, key] : keys.keys) {
    w.i64(step);
    w.u64(key.galois_elt);
    for (std::size_t i = 0; i < key.b.size(); ++i) {
      detail::write_ring(w, key.b[i]);
      detail::write_ring(w, key.a[i]);
    }
  }
  return out;
}

inline RotationKeys deserialize_rotation_keys(const CkksContext& ctx, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto h = detail::read_header(r, ObjectTag::kRotationKeys);
  detail::check_fp(ctx, h);
  if (h.level != ctx.max_level()) throw FormatError("rotation keys: wrong level");
  const std::size_t full = ctx.params().modulus_chain.size();
  const std::size_t count = r.u32();
  RotationKeys keys;
  for (std::size_t c = 0; c < count; ++c) {
    GaloisKey key;
    key.step = r.i64();
    key.galois_elt = r.u64();
    if (key.galois_elt != ctx.galois_element(key.step)) throw FormatError("rotation keys: galois element mismatch");
    for (std::size_t i = 0; i <= ctx.max_level(); ++i) {
      key.b.push_back(detail::read_ring(ctx, r, full, false));
      key.a.push_back(detail::read_ring(ctx, r, full, false));
    }
    keys.keys.emplace(key.step, std::move(key));
  }
  detail::require_end(r);
  return keys;
}

/// Rebuilds evaluation keys on the receiving side and recomputes the fingerprint.
inline EvaluationKeys assemble_eval_keys(const CkksContext& ctx, PublicKey pk, RotationKeys rot) {
  EvaluationKeys ev;
  ev.pk = std::move(pk);
  ev.rotations = std::move(rot);
  ev.params_fp = ctx.fingerprint();
  ev.fingerprint = key_fingerprint(ev);
  return ev;
}

}  // namespace privlora::ckks
