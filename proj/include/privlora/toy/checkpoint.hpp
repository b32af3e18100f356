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

#include <string>

#include "privlora/common/bytes.hpp"
#include "privlora/pll/checkpoint.hpp"
#include "privlora/toy/model.hpp"

namespace privlora::toy {

inline constexpr std::uint16_t kToyCheckpointVersion = 1;

/// "TOYM", u16 version, config block, then row-major f64 tensors: embedding,
/// per layer Wq Wk Wv Wo W1 W2, then per site slot a presence byte and the
/// adapter (alpha, r, A1, A2, and a PLL weights blob when wrapped).
inline Bytes serialize_model(const ToyModel& m) {
  const auto& c = m.config;
  Bytes out;
  ByteWriter w(out);
  w.magic("TOYM");
  w.u16(kToyCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.vocab));
  w.u32(static_cast<std::uint32_t>(c.layers));
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.heads));
  w.u32(static_cast<std::uint32_t>(c.mlp_mult));
  w.u32(static_cast<std::uint32_t>(c.rank));
  w.f64(c.alpha);
  w.u8(static_cast<std::uint8_t>(c.mask));
  w.u8(static_cast<std::uint8_t>(c.targets.size()));
  for (Target t : c.targets) w.u8(static_cast<std::uint8_t>(t));
  w.matrix(m.embed);
  for (const auto& l : m.layers) {
    for (const Matrix* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) w.matrix(*t);
  }
  for (const auto& a : m.adapters) {
    w.u8(a ? 1 : 0);
    if (!a) continue;
    w.f64(a->alpha);
    w.u32(static_cast<std::uint32_t>(a->r));
    w.matrix(a->a1);
    w.matrix(a->a2);
    w.u8(a->pll ? 1 : 0);
    if (a->pll) w.blob(pll::serialize_weights(*a->pll));
  }
  return out;
}

inline ToyModel deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("TOYM", "toy checkpoint");
  if (const auto v = r.u16(); v != kToyCheckpointVersion)
    throw FormatError("toy checkpoint: unsupported version " + std::to_string(v));
  ToyModel m;
  auto& c = m.config;
  c.vocab = r.u32();
  c.layers = r.u32();
  c.d_model = r.u32();
  c.heads = r.u32();
  c.mlp_mult = r.u32();
  c.rank = r.u32();
  c.alpha = r.f64();
  const auto mask = r.u8();
  if (mask > 1) throw FormatError("toy checkpoint: unknown mask mode");
  c.mask = static_cast<MaskMode>(mask);
  c.targets.resize(r.u8());
  for (auto& t : c.targets) {
    const auto v = r.u8();
    if (v >= kTargetsPerLayer) throw FormatError("toy checkpoint: unknown target");
    t = static_cast<Target>(v);
  }
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("toy checkpoint: ") + e.what());
  }
  const std::size_t d = c.d_model;
  auto read = [&](std::size_t rows, std::size_t cols, const char* what) {
    Matrix t = r.matrix();
    if (t.rows() != rows || t.cols() != cols) throw FormatError(std::string("toy checkpoint: bad shape for ") + what);
    return t;
  };
  m.embed = read(c.vocab, d, "embedding");
  for (std::size_t l = 0; l < c.layers; ++l) {
    LayerWeights lw;
    lw.wq = read(d, d, "Wq");
    lw.wk = read(d, d, "Wk");
    lw.wv = read(d, d, "Wv");
    lw.wo = read(d, d, "Wo");
    lw.w1 = read(d, c.hidden(), "W1");
    lw.w2 = read(c.hidden(), d, "W2");
    m.layers.push_back(std::move(lw));
  }
  m.adapters.resize(c.layers * kTargetsPerLayer);
  for (auto& slot : m.adapters) {
    const auto present = r.u8();
    if (present > 1) throw FormatError("toy checkpoint: bad adapter flag");
    if (!present) continue;
    LoraAdapter a;
    a.alpha = r.f64();
    a.r = r.u32();
    a.a1 = r.matrix();
    a.a2 = r.matrix();
    const auto has_pll = r.u8();
    if (has_pll > 1) throw FormatError("toy checkpoint: bad PLL flag");
    if (has_pll) {
      const Bytes blob = r.blob();
      a.pll = pll::deserialize_weights(blob);
      if (a.pll->config.m != d || a.pll->config.n != d) throw FormatError("toy checkpoint: PLL shape mismatch");
    }
    slot = std::move(a);
  }
  if (!r.done()) throw FormatError("toy checkpoint: trailing bytes");
  return m;
}

inline void save_model(const std::string& path, const ToyModel& m) { write_file(path, serialize_model(m)); }
inline ToyModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

}  // namespace privlora::toy
