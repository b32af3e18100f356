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
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "privlora/common/error.hpp"
#include "privlora/common/matrix.hpp"
#include "privlora/common/rng.hpp"
#include "privlora/pll/pll.hpp"

namespace privlora::attack {

enum class SampleTag { kLwe, kClwe, kUniform };

inline const char* tag_name(SampleTag t) {
  switch (t) {
    case SampleTag::kLwe: return "lwe";
    case SampleTag::kClwe: return "clwe";
    case SampleTag::kUniform: return "uniform";
  }
  return "?";
}

/// t samples over one shared A (m x n) and a secret row s of width m.
/// For clwe, gamma and beta are the mod-1 parameters. For lwe, q is the
/// integer modulus and beta the error std before rounding.
struct LweParams {
  std::size_t t = 1;
  std::size_t m = 1;
  std::size_t n = 1;
  double gamma = 0.0;
  double beta = 0.0;
  double q = 0.0;
};

struct LweSampleSet {
  SampleTag tag = SampleTag::kClwe;
  LweParams params;
  Matrix a;  // m x n
  Matrix s;  // 1 x m
  Matrix b;  // t x n
  Matrix e;  // t x n
};

/// Draws a sample set.
///
///   clwe:    A ~ N(0,1), |s| = 1, b_i = gamma s A + e_i mod 1, e ~ N(0, beta)
///   lwe:     A, s uniform in Z_q, b_i = s A + e_i mod q, e rounded N(0, beta)
///   uniform: A ~ N(0,1), b uniform in [-1/2, 1/2)
///
/// Residues are centered.
inline LweSampleSet clwe_sample(const LweParams& p, SampleTag tag, Rng& rng) {
  if (p.t == 0 || p.m == 0 || p.n == 0) throw ParameterError("sample set needs t, m, n > 0");
  if (!(p.beta >= 0.0) || !std::isfinite(p.beta)) throw ParameterError("beta must be finite and >= 0");
  if (tag == SampleTag::kClwe && !(p.gamma >= 2.0 * std::sqrt(static_cast<double>(p.m))))
    throw ParameterError("clwe needs gamma >= 2 sqrt(m)");
  if (tag == SampleTag::kLwe && (p.q < 2.0 || p.q != std::floor(p.q)))
    throw ParameterError("lwe needs an integer modulus q >= 2");

  LweSampleSet out;
  out.tag = tag;
  out.params = p;
  out.e = Matrix(p.t, p.n);
  std::normal_distribution<double> noise(0.0, 1.0);

  if (tag == SampleTag::kLwe) {
    const auto qi = static_cast<long long>(p.q);
    std::uniform_int_distribution<long long> zq(0, qi - 1);
    out.a = Matrix(p.m, p.n);
    out.s = Matrix(1, p.m);
    for (double& v : out.a.data()) v = static_cast<double>(zq(rng));
    for (double& v : out.s.data()) v = static_cast<double>(zq(rng));
    const Matrix sa = matmul(out.s, out.a);
    out.b = Matrix(p.t, p.n);
    for (std::size_t i = 0; i < p.t; ++i)
      for (std::size_t j = 0; j < p.n; ++j) {
        out.e(i, j) = std::nearbyint(p.beta * noise(rng));
        out.b(i, j) = pll::centered_mod(std::fmod(sa(0, j), p.q) + out.e(i, j), p.q);
      }
    return out;
  }

  out.a = gaussian_matrix(p.m, p.n, 1.0, rng);
  const auto s = pll::sample_sphere(p.m, 1.0, rng);
  out.s = Matrix(1, p.m);
  std::copy(s.begin(), s.end(), out.s.data().begin());
  if (tag == SampleTag::kUniform) {
    out.b = uniform_matrix(p.t, p.n, -0.5, 0.5, rng);
    return out;
  }
  const Matrix sa = matmul(out.s, out.a);
  out.b = Matrix(p.t, p.n);
  for (std::size_t i = 0; i < p.t; ++i)
    for (std::size_t j = 0; j < p.n; ++j) {
      out.e(i, j) = p.beta * noise(rng);
      out.b(i, j) = pll::centered_mod(p.gamma * sa(0, j) + out.e(i, j), 1.0);
    }
  return out;
}

struct SolveMatrixSample {
  Matrix x;        // 1 x m
  Matrix b_prime;  // 1 x n
};

/// Lifts mod-1 samples to mod-q samples of the shifted form (x + s') A.
/// Each x_i is drawn i.i.d. N(0, 1).
inline std::vector<SolveMatrixSample> alg1_convert(const LweSampleSet& set, double q, Rng& rng) {
  if (!(q > 0.0)) throw ParameterError("modulus q must be positive");
  const std::size_t m = set.a.rows();
  const std::size_t n = set.a.cols();
  require_shape(set.b, set.b.rows(), n, "responses");
  std::vector<SolveMatrixSample> out;
  out.reserve(set.b.rows());
  for (std::size_t i = 0; i < set.b.rows(); ++i) {
    SolveMatrixSample smp;
    smp.x = gaussian_matrix(1, m, 1.0, rng);
    const Matrix xa = matmul(smp.x, set.a);
    smp.b_prime = Matrix(1, n);
    for (std::size_t j = 0; j < n; ++j)
      smp.b_prime(0, j) = pll::centered_mod(q * set.b(i, j) + q * xa(0, j), q);
    out.push_back(std::move(smp));
  }
  return out;
}

/// max_j |b'_j - s'A_j - x(qA)_j - q e_j| mod q (centered), with s' = gamma q s.
/// Zero up to rounding when `smp` came from row `i` of a clwe set.
inline double solve_matrix_residual(const LweSampleSet& set, std::size_t i, const SolveMatrixSample& smp,
                                    double q) {
  const Matrix sa = matmul(set.s, set.a);
  const Matrix xa = matmul(smp.x, set.a);
  const double s_scale = set.params.gamma * q;
  double worst = 0.0;
  for (std::size_t j = 0; j < smp.b_prime.cols(); ++j) {
    const double r = smp.b_prime(0, j) - s_scale * sa(0, j) - q * xa(0, j) - q * set.e(i, j);
    worst = std::max(worst, std::abs(pll::centered_mod(r, q)));
  }
  return worst;
}

/// Secret-aware score: mean_j cos(2 pi (b_ij - gamma (sA)_j)). Near 1 for
/// low-noise clwe rows, near 0 for uniform rows.
inline std::vector<double> clwe_scores(const LweSampleSet& set) {
  const Matrix sa = matmul(set.s, set.a);
  std::vector<double> scores(set.b.rows());
  for (std::size_t i = 0; i < set.b.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < set.b.cols(); ++j)
      acc += std::cos(2.0 * std::numbers::pi * (set.b(i, j) - set.params.gamma * sa(0, j)));
    scores[i] = acc / static_cast<double>(set.b.cols());
  }
  return scores;
}

/// Area under the ROC curve for `pos` ranked above `neg` (Mann-Whitney, ties half).
inline double auc(std::vector<double> pos, std::vector<double> neg) {
  if (pos.empty() || neg.empty()) throw DimensionError("auc needs both classes");
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(lo, neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace privlora::attack
