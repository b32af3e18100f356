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
#include <optional>
#include <random>
#include <string>

#include "privlora/common/matrix.hpp"

namespace privlora {

/// Explicit RNG handle passed to every randomized operation. Not thread-safe;
/// each session / worker owns its own.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Rng make_rng_from_entropy() {
  std::random_device rd;
  std::seed_seq seq{rd(), rd(), rd(), rd()};
  return Rng(seq);
}

/// Reads an unsigned integer seed from the environment, if set and well formed.
inline std::optional<std::uint64_t> seed_from_env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    return std::stoull(v);
  } catch (...) {
    return std::nullopt;
  }
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = dist(rng);
  return m;
}

inline Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = dist(rng);
  return m;
}

}  // namespace privlora
