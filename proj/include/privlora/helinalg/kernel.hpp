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

#include <atomic>
#include <cmath>
#include <exception>
#include <random>
#include <thread>
#include <vector>

#include "privlora/ckks.hpp"
#include "privlora/common/matrix.hpp"
#include "privlora/helinalg/layout.hpp"

namespace privlora::helinalg {

using ckks::Ciphertext;
using ckks::CkksContext;
using ckks::EvaluationKeys;
using ckks::PlaintextOperand;

/// Encrypted, row-replicated matrix split across layout.ct_count ciphertexts.
struct PackedMatrix {
  PackLayout layout;
  std::vector<Ciphertext> ciphertexts;
  std::size_t level = 0;
  double scale = 1.0;
};

/// Plaintext operands for one kernel call. `offsets` holds one strided
/// Q~_t operand per ciphertext chunk.
struct ServerOperands {
  PackLayout layout;
  std::size_t input_level = 0;
  PlaintextOperand a1;
  PlaintextOperand mask;
  PlaintextOperand a2;
  std::vector<PlaintextOperand> offsets;
};

struct KernelStats {
  std::size_t ciphertexts = 0;
  std::size_t rotations = 0;
  std::size_t plain_mults = 0;
  std::size_t rescales = 0;
  std::size_t levels_consumed = 0;
};

struct KernelOptions {
  /// Worker threads over ciphertext chunks; 1 runs inline.
  std::size_t threads = 1;
};

/// Slot vectors of the replicated input for each chunk (before encoding).
inline std::vector<std::vector<double>> packed_slots(const PackLayout& layout, const Matrix& x, std::size_t slots) {
  require_shape(x, layout.d, layout.m, "pack_input");
  std::vector<std::vector<double>> out(layout.ct_count, std::vector<double>(slots, 0.0));
  for (std::size_t c = 0; c < layout.ct_count; ++c) {
    for (std::size_t il = 0; il < layout.rows_in(c); ++il) {
      const auto row = x.row(c * layout.rows_per_ct + il);
      for (std::size_t rho = 0; rho < layout.r; ++rho)
        for (std::size_t j = 0; j < layout.m; ++j) out[c][layout.slot(il, rho, j)] = row[j];
    }
  }
  return out;
}

inline PackedMatrix pack_input(const CkksContext& ctx, const Matrix& x, const PackLayout& layout,
                               const EvaluationKeys& keys, Rng& rng) {
  if (layout.block() > ctx.slots()) throw CapacityError("layout does not fit the slot count");
  const auto slots = packed_slots(layout, x, ctx.slots());
  PackedMatrix out;
  out.layout = layout;
  out.level = ctx.max_level();
  out.scale = ctx.params().default_scale();
  for (const auto& v : slots) {
    out.ciphertexts.push_back(ckks::encrypt(ctx, ckks::encode(ctx, std::span<const double>(v), out.level, out.scale),
                                            keys, rng));
  }
  return out;
}

/// Slot values of the offset for one chunk: Q_t in the result slots of its
/// rows, uniform junk in [-junk_bound, junk_bound] everywhere else.
inline std::vector<double> offset_slots(const PackLayout& layout, const Matrix& qt, std::size_t chunk,
                                        std::size_t slots, double junk_bound, Rng& rng) {
  std::vector<double> v(slots, 0.0);
  if (junk_bound > 0) {
    std::uniform_real_distribution<double> junk(-junk_bound, junk_bound);
    for (auto& s : v) s = junk(rng);
  }
  for (std::size_t il = 0; il < layout.rows_in(chunk); ++il)
    for (std::size_t j = 0; j < layout.n; ++j)
      v[layout.result_slot(il, j)] = qt(chunk * layout.rows_per_ct + il, j);
  return v;
}

/// Builds the three multiplicative operands and the per-chunk offsets.
///
/// A1 is m x rank and A2 is rank x n. Each operand is encoded at the scale of
/// the prime the following rescale drops, so the ciphertext scale stays at
/// the default. Non-result slots of the offsets get uniform values in
/// [-junk_bound, junk_bound]; junk_bound = 0 leaves them zero.
inline ServerOperands build_server_operands(const CkksContext& ctx, const Matrix& a1, const Matrix& a2,
                                            const Matrix& qt, const PackLayout& layout, double junk_bound,
                                            Rng& junk_rng) {
  require_shape(a1, layout.m, layout.rank, "A1");
  require_shape(a2, layout.rank, layout.n, "A2");
  require_shape(qt, layout.d, layout.n, "Q_t");
  if (!(junk_bound >= 0) || !std::isfinite(junk_bound)) throw ParameterError("junk bound must be finite and >= 0");
  const std::size_t top = ctx.max_level();
  if (top < ckks::kRequiredDepth) throw LevelError("parameters lack the depth the kernel needs");
  const std::size_t slots = ctx.slots();
  const std::size_t rows = layout.rows_per_ct;

  std::vector<double> v1(slots, 0.0), vd(slots, 0.0), v2(slots, 0.0);
  for (std::size_t il = 0; il < rows; ++il) {
    for (std::size_t rho = 0; rho < layout.r; ++rho) {
      vd[layout.slot(il, rho, 0)] = 1.0;
      if (rho >= layout.rank) continue;
      for (std::size_t j = 0; j < layout.m; ++j) v1[layout.slot(il, rho, j)] = a1(j, rho);
      for (std::size_t j = 0; j < layout.n; ++j) v2[layout.slot(il, rho, j)] = a2(rho, j);
    }
  }

  ServerOperands ops;
  ops.layout = layout;
  ops.input_level = top;
  const auto scale_at = [&](std::size_t level) { return static_cast<double>(ctx.prime(level)); };
  ops.a1 = ckks::encode(ctx, std::span<const double>(v1), top, scale_at(top));
  ops.mask = ckks::encode(ctx, std::span<const double>(vd), top - 1, scale_at(top - 1));
  ops.a2 = ckks::encode(ctx, std::span<const double>(v2), top - 2, scale_at(top - 2));

  const double out_scale = ctx.params().default_scale();
  for (std::size_t c = 0; c < layout.ct_count; ++c) {
    const auto v = offset_slots(layout, qt, c, slots, junk_bound, junk_rng);
    ops.offsets.push_back(ckks::encode(ctx, std::span<const double>(v), top - 3, out_scale));
  }
  return ops;
}

namespace detail {

inline Ciphertext apply_one(const CkksContext& ctx, const Ciphertext& ct, const ServerOperands& ops,
                            const PlaintextOperand& offset, const EvaluationKeys& keys, KernelStats& st) {
  const PackLayout& l = ops.layout;
  auto mult_rescale = [&](const Ciphertext& a, const PlaintextOperand& pt) {
    ++st.plain_mults;
    ++st.rescales;
    return ckks::rescale(ctx, ckks::cmult_plain(ctx, a, pt));
  };
  auto rotate_add = [&](const Ciphertext& a, long long step) {
    ++st.rotations;
    return ckks::add(ctx, a, ckks::rotate(ctx, a, step, keys));
  };

  // Per-replica products with column rho of A1, then sum each m_pad block
  // into its first slot.
  Ciphertext acc = mult_rescale(ct, ops.a1);
  for (std::size_t j = 0; j < l.log_m_pad(); ++j) acc = rotate_add(acc, 1LL << j);
  // Keep only the block heads, then copy each head across its block.
  acc = mult_rescale(acc, ops.mask);
  for (std::size_t j = 0; j < l.log_m_pad(); ++j) acc = rotate_add(acc, -(1LL << j));
  // Scale by row rho of A2 and sum the r replicas into the first one.
  acc = mult_rescale(acc, ops.a2);
  for (std::size_t j = 0; j < l.log_r(); ++j) acc = rotate_add(acc, static_cast<long long>(l.m_pad) << j);
  return ckks::add_plain(ctx, acc, offset);
}

}  // namespace detail

/// Encrypted x * A1 * A2 + Q_t in the strided result layout. Consumes three
/// levels; never touches secret material.
inline PackedMatrix he_lora_apply(const CkksContext& ctx, const PackedMatrix& x, const ServerOperands& ops,
                                  const EvaluationKeys& keys, const KernelOptions& opts = {},
                                  KernelStats* stats = nullptr) {
  if (!(x.layout == ops.layout)) throw DimensionError("input layout does not match the operands");
  if (x.ciphertexts.size() != x.layout.ct_count || ops.offsets.size() != x.layout.ct_count) {
    throw DimensionError("ciphertext count does not match the layout");
  }
  for (const auto& ct : x.ciphertexts) {
    if (ct.level != ops.input_level) {
      throw LevelError("kernel input must be at level " + std::to_string(ops.input_level) + ", got " +
                       std::to_string(ct.level));
    }
  }
  for (long long step : x.layout.rotation_steps()) {
    if (keys.find(ctx, step) == nullptr) throw KeyError("missing rotation key for step " + std::to_string(step));
  }

  const std::size_t count = x.ciphertexts.size();
  PackedMatrix out;
  out.layout = x.layout;
  out.ciphertexts.resize(count);
  std::vector<KernelStats> per(count);
  auto work = [&](std::size_t c) {
    out.ciphertexts[c] = detail::apply_one(ctx, x.ciphertexts[c], ops, ops.offsets[c], keys, per[c]);
  };

  const std::size_t threads = std::min(std::max<std::size_t>(opts.threads, 1), count);
  if (threads <= 1) {
    for (std::size_t c = 0; c < count; ++c) work(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t c = next++; c < count; c = next++) work(c);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  out.level = out.ciphertexts.front().level;
  out.scale = out.ciphertexts.front().scale;
  if (stats != nullptr) {
    *stats = {};
    stats->ciphertexts = count;
    for (const auto& s : per) {
      stats->rotations += s.rotations;
      stats->plain_mults += s.plain_mults;
      stats->rescales += s.rescales;
    }
    stats->levels_consumed = ops.input_level - out.level;
  }
  return out;
}

/// Reads the d x n result out of the strided slots. Needs the secret key.
inline Matrix extract_result(const CkksContext& ctx, const PackedMatrix& res, const ckks::SecretKey& sk) {
  const PackLayout& l = res.layout;
  if (res.ciphertexts.size() != l.ct_count) throw DimensionError("result ciphertext count does not match the layout");
  Matrix out(l.d, l.n);
  for (std::size_t c = 0; c < l.ct_count; ++c) {
    const auto v = ckks::decrypt_values(ctx, res.ciphertexts[c], sk);
    for (std::size_t il = 0; il < l.rows_in(c); ++il)
      for (std::size_t j = 0; j < l.n; ++j) out(c * l.rows_per_ct + il, j) = v[l.result_slot(il, j)];
  }
  return out;
}

}  // namespace privlora::helinalg
