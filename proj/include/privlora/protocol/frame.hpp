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

#include <cstdint>
#include <cstdlib>
#include <string>

#include "privlora/common/bytes.hpp"
#include "privlora/common/error.hpp"

namespace privlora::protocol {

inline constexpr std::string_view kFrameMagic = "PLLI";
inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 11;
inline constexpr std::size_t kDefaultMaxFrame = std::size_t{64} << 20;

enum class MsgType : std::uint8_t {
  kHello = 1,
  kParams = 2,
  kPubKey = 3,
  kRotKeys = 4,
  kModel = 5,
  kLoraReq = 6,
  kLoraResp = 7,
  kError = 8,
  kBye = 9,
};

inline const char* msg_name(MsgType t) {
  switch (t) {
    case MsgType::kHello: return "HELLO";
    case MsgType::kParams: return "PARAMS";
    case MsgType::kPubKey: return "PUBKEY";
    case MsgType::kRotKeys: return "ROTKEYS";
    case MsgType::kModel: return "MODEL";
    case MsgType::kLoraReq: return "LORA_REQ";
    case MsgType::kLoraResp: return "LORA_RESP";
    case MsgType::kError: return "ERROR";
    case MsgType::kBye: return "BYE";
  }
  return "?";
}

struct Frame {
  MsgType type = MsgType::kBye;
  Bytes payload;
};

/// Frame size cap: PRIVLORA_MAX_FRAME when set to a positive integer,
/// 64 MiB otherwise.
inline std::size_t max_frame_from_env() {
  if (const char* v = std::getenv("PRIVLORA_MAX_FRAME"); v != nullptr && *v != '\0') {
    try {
      const auto n = std::stoull(v);
      if (n > 0) return static_cast<std::size_t>(n);
    } catch (...) {
    }
  }
  return kDefaultMaxFrame;
}

struct FrameHeader {
  MsgType type = MsgType::kBye;
  std::uint32_t length = 0;
};

/// Checks magic, version, type and the size cap of an 11-byte header.
inline FrameHeader parse_header(std::span<const std::uint8_t> raw, std::size_t max_frame) {
  if (raw.size() < kFrameHeaderSize) throw FramingError("frame: truncated header");
  ByteReader r(raw.first(kFrameHeaderSize));
  try {
    r.expect_magic(kFrameMagic, "frame");
  } catch (const FormatError&) {
    throw FramingError("frame: bad magic");
  }
  if (const auto v = r.u16(); v != kProtocolVersion)
    throw FramingError("frame: unsupported version " + std::to_string(v));
  const auto type = r.u8();
  if (type < static_cast<std::uint8_t>(MsgType::kHello) || type > static_cast<std::uint8_t>(MsgType::kBye))
    throw FramingError("frame: unknown message type " + std::to_string(type));
  FrameHeader h;
  h.type = static_cast<MsgType>(type);
  h.length = r.u32();
  if (h.length > max_frame) throw FramingError("frame: payload of " + std::to_string(h.length) + " bytes exceeds cap");
  return h;
}

inline Bytes encode_frame(const Frame& f, std::size_t max_frame = kDefaultMaxFrame) {
  if (f.payload.size() > max_frame || f.payload.size() > UINT32_MAX)
    throw FramingError("frame: payload of " + std::to_string(f.payload.size()) + " bytes exceeds cap");
  Bytes out;
  out.reserve(kFrameHeaderSize + f.payload.size());
  ByteWriter w(out);
  w.magic(kFrameMagic);
  w.u16(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u32(static_cast<std::uint32_t>(f.payload.size()));
  w.raw(f.payload.data(), f.payload.size());
  return out;
}

/// Decodes exactly one frame; the length field must match the bytes given.
inline Frame decode_frame(std::span<const std::uint8_t> bytes, std::size_t max_frame = kDefaultMaxFrame) {
  const FrameHeader h = parse_header(bytes, max_frame);
  if (bytes.size() - kFrameHeaderSize != h.length) throw FramingError("frame: length does not match payload");
  Frame f;
  f.type = h.type;
  f.payload.assign(bytes.begin() + kFrameHeaderSize, bytes.end());
  return f;
}

}  // namespace privlora::protocol
