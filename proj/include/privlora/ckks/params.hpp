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
#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <vector>

#include "privlora/ckks/modarith.hpp"
#include "privlora/ckks/ntt.hpp"
#include "privlora/common/bytes.hpp"

namespace privlora::ckks {

/// Minimum multiplicative depth every parameter set must support: the LoRA
/// kernel does three plaintext multiplies, each followed by a rescale.
inline constexpr std::size_t kRequiredDepth = 3;

/// Leveled CKKS parameters.
///
/// `modulus_chain` is ordered q_0, q_1, ..., q_L, P. The last prime P is the
/// special prime used only for key switching; data lives modulo q_0...q_l
/// where l is the ciphertext level. A fresh ciphertext sits at level
/// L = chain.size() - 2 and every rescale drops the top data prime.
struct CkksParams {
  std::size_t ring_degree = 8192;
  std::vector<u64> modulus_chain;
  double scale_bits = 40;

  std::size_t slot_count() const { return ring_degree / 2; }
  std::size_t max_level() const { return modulus_chain.size() - 2; }
  std::size_t special_index() const { return modulus_chain.size() - 1; }
  double default_scale() const { return std::exp2(scale_bits); }

  /// Throws ParameterError unless the set is usable.
  void validate() const {
    if (!std::has_single_bit(ring_degree) || ring_degree < 16) {
      throw ParameterError("ring degree must be a power of two >= 16, got " + std::to_string(ring_degree));
    }
    if (modulus_chain.size() < kRequiredDepth + 2) {
      throw ParameterError("modulus chain needs at least " + std::to_string(kRequiredDepth + 2) + " primes");
    }
    for (std::size_t i = 0; i < modulus_chain.size(); ++i) {
      const u64 p = modulus_chain[i];
      if (p >= (u64{1} << 61)) throw ParameterError("primes must be below 2^61");
      if (!is_prime(p)) throw ParameterError("modulus " + std::to_string(p) + " is not prime");
      if ((p - 1) % (2 * ring_degree) != 0) {
        throw ParameterError("modulus " + std::to_string(p) + " is not 1 mod 2N");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (modulus_chain[j] == p) throw ParameterError("modulus chain primes must be distinct");
      }
    }
    if (!(scale_bits > 0) || scale_bits >= 60) throw ParameterError("scale bits must be in (0, 60)");
  }

  Bytes body_bytes() const {
    Bytes out;
    ByteWriter w(out);
    w.u32(static_cast<std::uint32_t>(ring_degree));
    w.u32(static_cast<std::uint32_t>(modulus_chain.size()));
    w.u64s(modulus_chain);
    w.f64(scale_bits);
    return out;
  }

  Digest fingerprint() const { return sha256(body_bytes()); }

  /// Chain of primes with the given sizes, NTT-friendly for `ring_degree`.
  static CkksParams with_bit_sizes(std::size_t ring_degree, const std::vector<int>& bits, double scale_bits) {
    CkksParams p;
    p.ring_degree = ring_degree;
    p.modulus_chain = generate_ntt_primes(ring_degree, bits);
    p.scale_bits = scale_bits;
    return p;
  }

  /// N = 8192, primes of 60/40/40/40/60 bits, scale 2^40.
  static CkksParams defaults() { return with_bit_sizes(8192, {60, 40, 40, 40, 60}, 40); }
};

/// Immutable precomputation shared by every operation on one parameter set.
class CkksContext {
 public:
  static std::shared_ptr<const CkksContext> create(const CkksParams& params) {
    return std::shared_ptr<const CkksContext>(new CkksContext(params));
  }

  const CkksParams& params() const { return params_; }
  const Digest& fingerprint() const { return fingerprint_; }
  std::size_t n() const { return params_.ring_degree; }
  std::size_t slots() const { return params_.slot_count(); }
  std::size_t max_level() const { return params_.max_level(); }
  std::size_t special_index() const { return params_.special_index(); }
  u64 prime(std::size_t idx) const { return params_.modulus_chain[idx]; }
  const NttTables& ntt(std::size_t idx) const { return ntt_[idx]; }
  const Modulus& modulus(std::size_t idx) const { return moduli_[idx]; }

  /// q_i^{-1} mod q_j, used when q_i is divided out (rescale, key-switch mod-down).
  u64 inv_prime_mod(std::size_t i, std::size_t j) const { return inv_table_[i * ntt_.size() + j]; }

  /// 5^j mod 2N for j < slots: the slot-rotation group.
  const std::vector<std::size_t>& rotation_group() const { return rot_group_; }
  /// exp(2 pi i k / 2N) for k <= 2N.
  const std::vector<std::complex<double>>& roots() const { return roots_; }

  /// Galois element implementing a left rotation by `step` slots.
  u64 galois_element(long long step) const {
    const long long s = static_cast<long long>(slots());
    long long k = step % s;
    if (k < 0) k += s;
    return pow_mod(5, static_cast<u64>(k), 2 * n());
  }

 private:
  explicit CkksContext(const CkksParams& params) : params_(params) {
    params_.validate();
    fingerprint_ = params_.fingerprint();
    const std::size_t k = params_.modulus_chain.size();
    ntt_.reserve(k);
    for (u64 p : params_.modulus_chain) {
      ntt_.emplace_back(params_.ring_degree, p);
      moduli_.emplace_back(p);
    }
    inv_table_.assign(k * k, 0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (i != j) inv_table_[i * k + j] = inv_mod(params_.modulus_chain[i] % params_.modulus_chain[j],
                                                    params_.modulus_chain[j]);
    const std::size_t m = 2 * n();
    rot_group_.resize(slots());
    std::size_t g = 1;
    for (auto& r : rot_group_) {
      r = g;
      g = (g * 5) % m;
    }
    roots_.resize(m + 1);
    for (std::size_t j = 0; j <= m; ++j) {
      const double angle = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(m);
      roots_[j] = {std::cos(angle), std::sin(angle)};
    }
  }

  CkksParams params_;
  Digest fingerprint_{};
  std::vector<NttTables> ntt_;
  std::vector<Modulus> moduli_;
  std::vector<u64> inv_table_;
  std::vector<std::size_t> rot_group_;
  std::vector<std::complex<double>> roots_;
};

using ContextPtr = std::shared_ptr<const CkksContext>;

}  // namespace privlora::ckks
