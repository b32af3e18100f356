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
#include <vector>

#include "privlora/common/bytes.hpp"
#include "privlora/helinalg/layout.hpp"
#include "privlora/protocol/frame.hpp"
#include "privlora/toy/model.hpp"

namespace privlora::protocol {

/// HELLO: version, then the fingerprint of key material the client already
/// holds (all zero when it holds none).
struct Hello {
  std::uint16_t version = kProtocolVersion;
  Digest key_fp{};
};

/// PARAMS: session id, CKKS parameters, whether the server still caches the
/// client's rotation keys, and the rotation steps the kernel will need.
struct ParamsMsg {
  std::uint64_t session_id = 0;
  Bytes ckks_params;
  bool cache_hit = false;
  std::vector<long long> rotation_steps;
};

/// LORA_REQ chunk. A call whose ciphertexts exceed one frame is split into
/// `chunk_count` frames sharing t.
struct LoraRequest {
  std::uint64_t session_id = 0;
  std::uint64_t t = 0;
  toy::SplitPoint site;
  helinalg::PackLayout layout;
  std::uint32_t chunk_index = 0;
  std::uint32_t chunk_count = 1;
  std::vector<Bytes> ciphertexts;
};

struct LoraResponse {
  std::uint64_t session_id = 0;
  std::uint64_t t = 0;
  std::uint32_t chunk_index = 0;
  std::uint32_t chunk_count = 1;
  std::vector<Bytes> ciphertexts;
};

enum class ErrorCode : std::uint16_t {
  kFraming = 1,
  kOrdering = 2,
  kMalformed = 3,
  kKeys = 4,
  kRejected = 5,
  kInternal = 6,
};

struct ErrorMsg {
  ErrorCode code = ErrorCode::kInternal;
  std::string message;
};

namespace detail {

inline void write_string(ByteWriter& w, const std::string& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  w.raw(s.data(), s.size());
}

inline std::string read_string(ByteReader& r) {
  const std::size_t n = r.u32();
  if (n > r.remaining()) throw FormatError("string: truncated");
  std::string s(n, '\0');
  r.raw(s.data(), n);
  return s;
}

inline void write_blobs(ByteWriter& w, const std::vector<Bytes>& blobs) {
  w.u32(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& b : blobs) w.blob(b);
}

inline std::vector<Bytes> read_blobs(ByteReader& r) {
  const std::size_t n = r.u32();
  if (n > r.remaining() / 8) throw FormatError("blob list: truncated");
  std::vector<Bytes> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(r.blob());
  return out;
}

inline void require_end(const ByteReader& r, const char* what) {
  if (!r.done()) throw FormatError(std::string(what) + ": trailing bytes");
}

inline void check_chunks(std::uint32_t index, std::uint32_t count, const char* what) {
  if (count == 0 || index >= count) throw FormatError(std::string(what) + ": bad chunk numbering");
}

}  // namespace detail

inline Bytes encode(const Hello& m) {
  Bytes out;
  ByteWriter w(out);
  w.u16(m.version);
  w.digest(m.key_fp);
  return out;
}

inline Hello decode_hello(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Hello m;
  m.version = r.u16();
  m.key_fp = r.digest();
  detail::require_end(r, "HELLO");
  return m;
}

inline Bytes encode(const ParamsMsg& m) {
  Bytes out;
  ByteWriter w(out);
  w.u64(m.session_id);
  w.blob(m.ckks_params);
  w.u8(m.cache_hit ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(m.rotation_steps.size()));
  for (long long s : m.rotation_steps) w.i64(s);
  return out;
}

inline ParamsMsg decode_params(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ParamsMsg m;
  m.session_id = r.u64();
  m.ckks_params = r.blob();
  const auto hit = r.u8();
  if (hit > 1) throw FormatError("PARAMS: bad cache flag");
  m.cache_hit = hit == 1;
  const std::size_t n = r.u32();
  if (n > r.remaining() / 8) throw FormatError("PARAMS: truncated step list");
  for (std::size_t i = 0; i < n; ++i) m.rotation_steps.push_back(r.i64());
  detail::require_end(r, "PARAMS");
  return m;
}

inline Bytes encode(const LoraRequest& m) {
  Bytes out;
  ByteWriter w(out);
  w.u64(m.session_id);
  w.u64(m.t);
  w.u32(m.site.layer);
  w.u8(static_cast<std::uint8_t>(m.site.target));
  m.layout.write(w);
  w.u32(m.chunk_index);
  w.u32(m.chunk_count);
  detail::write_blobs(w, m.ciphertexts);
  return out;
}

inline LoraRequest decode_request(std::span<const std::uint8_t> bytes, std::size_t slots) {
  ByteReader r(bytes);
  LoraRequest m;
  m.session_id = r.u64();
  m.t = r.u64();
  m.site.layer = r.u32();
  const auto target = r.u8();
  if (target >= toy::kTargetsPerLayer) throw FormatError("LORA_REQ: unknown target");
  m.site.target = static_cast<toy::Target>(target);
  m.layout = helinalg::PackLayout::read(r, slots);
  m.chunk_index = r.u32();
  m.chunk_count = r.u32();
  detail::check_chunks(m.chunk_index, m.chunk_count, "LORA_REQ");
  m.ciphertexts = detail::read_blobs(r);
  detail::require_end(r, "LORA_REQ");
  return m;
}

inline Bytes encode(const LoraResponse& m) {
  Bytes out;
  ByteWriter w(out);
  w.u64(m.session_id);
  w.u64(m.t);
  w.u32(m.chunk_index);
  w.u32(m.chunk_count);
  detail::write_blobs(w, m.ciphertexts);
  return out;
}

inline LoraResponse decode_response(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  LoraResponse m;
  m.session_id = r.u64();
  m.t = r.u64();
  m.chunk_index = r.u32();
  m.chunk_count = r.u32();
  detail::check_chunks(m.chunk_index, m.chunk_count, "LORA_RESP");
  m.ciphertexts = detail::read_blobs(r);
  detail::require_end(r, "LORA_RESP");
  return m;
}

inline Bytes encode(const ErrorMsg& m) {
  Bytes out;
  ByteWriter w(out);
  w.u16(static_cast<std::uint16_t>(m.code));
  detail::write_string(w, m.message);
  return out;
}

inline ErrorMsg decode_error(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ErrorMsg m;
  m.code = static_cast<ErrorCode>(r.u16());
  m.message = detail::read_string(r);
  detail::require_end(r, "ERROR");
  return m;
}

/// Splits `items` into consecutive groups whose blob bytes stay under
/// `budget`; every group holds at least one item.
inline std::vector<std::vector<Bytes>> chunk_blobs(std::vector<Bytes> items, std::size_t budget) {
  std::vector<std::vector<Bytes>> out(1);
  std::size_t used = 0;
  for (auto& b : items) {
    const std::size_t cost = b.size() + 8;
    if (!out.back().empty() && used + cost > budget) {
      out.emplace_back();
      used = 0;
    }
    used += cost;
    out.back().push_back(std::move(b));
  }
  return out;
}

/// Room left for ciphertexts in one LORA_REQ frame: fixed fields are well
/// under 128 bytes.
inline std::size_t ciphertext_budget(std::size_t max_frame) { return max_frame > 256 ? max_frame - 256 : 1; }

}  // namespace privlora::protocol
