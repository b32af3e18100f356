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

#include <stdexcept>
#include <string>

namespace privlora {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PRIVLORA_DEFINE_ERROR(Name)      \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

/// Invalid scheme or layer parameters (non power-of-two degree, bad prime, ...).
PRIVLORA_DEFINE_ERROR(ParameterError);
/// More values than slots, or a layout that overflows a ciphertext.
PRIVLORA_DEFINE_ERROR(CapacityError);
/// Missing rotation key or fingerprint mismatch between keys and data.
PRIVLORA_DEFINE_ERROR(KeyError);
/// A rescale or multiplication would go below level 0.
PRIVLORA_DEFINE_ERROR(LevelError);
/// Operands disagree on level or scale.
PRIVLORA_DEFINE_ERROR(AlignmentError);
/// Matrix shapes do not line up.
PRIVLORA_DEFINE_ERROR(DimensionError);
/// Truncated, oversized or otherwise malformed bytes.
PRIVLORA_DEFINE_ERROR(FormatError);
/// Wire framing violations (bad magic, bad length, oversize frame).
PRIVLORA_DEFINE_ERROR(FramingError);
/// Session state-machine violations and ERROR frames from the peer.
PRIVLORA_DEFINE_ERROR(ProtocolError);
/// Socket-level failures.
PRIVLORA_DEFINE_ERROR(TransportError);
/// Training produced a non-finite loss.
PRIVLORA_DEFINE_ERROR(DivergenceError);
/// Model-extraction attack could not complete (e.g. oracle is not deterministic).
PRIVLORA_DEFINE_ERROR(ExtractionError);

#undef PRIVLORA_DEFINE_ERROR

}  // namespace privlora
