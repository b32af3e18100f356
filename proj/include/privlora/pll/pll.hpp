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

#include <cmath>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "privlora/common/error.hpp"
#include "privlora/common/matrix.hpp"
#include "privlora/common/rng.hpp"

namespace privlora::pll {

/// Centered representative of y modulo q, in [-q/2, q/2).
inline double centered_mod(double y, double q) {
  const double r = y - q * std::floor(y / q + 0.5);
  // floor can land one step off when y / q + 0.5 rounds up to an integer.
  if (r >= q / 2) return r - q;
  if (r < -q / 2) return r + q;
  return r;
}

/// q rounded to the nearest integer, ties to even.
inline long long round_q(double q) { return static_cast<long long>(std::nearbyint(q)); }

inline Matrix demodulate(const Matrix& y, double q) {
  if (!(q > 0)) throw ParameterError("modulus q must be positive");
  Matrix out = y;
  for (auto& v : out.data()) v = centered_mod(v, q);
  return out;
}

struct PllConfig {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t m_prime = 1;
  double q = 1.0;
  double gamma = 0.0;
  double p_bern = 0.9;
  std::size_t rank = 0;  // 0 = dense A
  double sigma_init = 0.02;
  /// Rows of s. 1 shares one vector across every input row; more than 1
  /// samples one vector per row and fixes the row count d.
  std::size_t s_rows = 1;

  /// gamma = 2 sqrt(m) q, the smallest length the hardness argument covers.
  static PllConfig make(std::size_t m, std::size_t n, double q, std::size_t rank = 0) {
    PllConfig c;
    c.m = m;
    c.n = n;
    c.q = q;
    c.rank = rank;
    c.gamma = min_gamma(m, q);
    return c;
  }

  static double min_gamma(std::size_t m, double q) { return 2.0 * std::sqrt(static_cast<double>(m)) * q; }

  bool dense() const { return rank == 0; }

  /// Throws ParameterError on invalid settings. Returns a warning when
  /// gamma / q < 2 sqrt(m); with `strict` that becomes an error instead.
  std::string validate(bool strict = false) const {
    if (m == 0 || n == 0 || m_prime == 0 || s_rows == 0) throw ParameterError("PLL dimensions must be positive");
    if (!(q > 0) || !std::isfinite(q)) throw ParameterError("PLL modulus q must be positive and finite");
    if (!(gamma >= 0) || !std::isfinite(gamma)) throw ParameterError("PLL gamma must be finite and >= 0");
    if (!(p_bern > 0 && p_bern <= 1)) throw ParameterError("Bernoulli rate must be in (0, 1]");
    if (!(sigma_init >= 0)) throw ParameterError("sigma_init must be >= 0");
    const double need = min_gamma(m, q);
    if (gamma < need * (1 - 1e-12)) {
      std::string msg = "gamma/q = " + std::to_string(gamma / q) + " is below 2*sqrt(m) = " +
                        std::to_string(need / q);
      if (strict) throw ParameterError(msg);
      return msg;
    }
    return {};
  }
};

/// Private layer weights. Trainable: A (or A1, A2) and E'. Frozen: s, q.
/// x' is all ones and never stored.
struct PllWeights {
  PllConfig config;
  Matrix a;   // m x n, dense only
  Matrix a1;  // m x rank
  Matrix a2;  // rank x n
  Matrix e_prime;
  Matrix s;  // s_rows x m, each row of length gamma

  Matrix effective_a() const { return config.dense() ? a : matmul(a1, a2); }
};

/// Uniform point on the sphere of radius `radius` in R^dim.
inline std::vector<double> sample_sphere(std::size_t dim, double radius, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0;
  do {
    norm = 0;
    for (auto& x : v) {
      x = g(rng);
      norm += x * x;
    }
  } while (norm == 0);
  norm = std::sqrt(norm);
  for (auto& x : v) x *= radius / norm;
  return v;
}

/// Fresh weights: s on the radius-gamma sphere, E' ~ N(0, sigma_init).
/// Factored A starts as A1 ~ N(0, 1/m), A2 = 0; dense A ~ N(0, 1/m).
inline PllWeights pll_init(const PllConfig& cfg, Rng& rng, bool strict = false) {
  if (auto warn = cfg.validate(strict); !warn.empty()) std::clog << "warning: " << warn << '\n';
  PllWeights w;
  w.config = cfg;
  const double a_std = 1.0 / std::sqrt(static_cast<double>(cfg.m));
  if (cfg.dense()) {
    w.a = gaussian_matrix(cfg.m, cfg.n, a_std, rng);
  } else {
    w.a1 = gaussian_matrix(cfg.m, cfg.rank, a_std, rng);
    w.a2 = Matrix(cfg.rank, cfg.n);
  }
  w.e_prime = gaussian_matrix(cfg.m_prime, cfg.n, cfg.sigma_init, rng);
  w.s = Matrix(cfg.s_rows, cfg.m);
  for (std::size_t i = 0; i < cfg.s_rows; ++i) {
    const auto v = sample_sphere(cfg.m, cfg.gamma, rng);
    std::copy(v.begin(), v.end(), w.s.row(i).begin());
  }
  return w;
}

/// Per-round randomness and the offset it induces.
struct PllRound {
  Matrix p;    // m' x n, entries 0 or 1
  IntMatrix k; // d x n
  Matrix qt;   // d x n
};

inline void check_rows(const PllWeights& w, std::size_t d) {
  if (w.config.s_rows != 1 && w.config.s_rows != d) {
    throw DimensionError("weights carry " + std::to_string(w.config.s_rows) + " secret rows, input has " +
                         std::to_string(d));
  }
}

/// s A broadcast to d rows.
inline Matrix secret_term(const PllWeights& w, std::size_t d) {
  check_rows(w, d);
  const Matrix sa = matmul(w.s, w.effective_a());
  if (sa.rows() == d) return sa;
  return add_row_broadcast(Matrix(d, w.config.n), sa);
}

/// Q_t = x'(E' . P) + s A + k q.
inline Matrix build_qt(const PllWeights& w, std::size_t d, const Matrix& p, const IntMatrix& k) {
  const auto& c = w.config;
  if (p.rows() != c.m_prime || p.cols() != c.n) throw DimensionError("P must be m' x n");
  if (k.rows() != d || k.cols() != c.n) throw DimensionError("k must be d x n");
  Matrix e(1, c.n);
  for (std::size_t i = 0; i < c.m_prime; ++i)
    for (std::size_t j = 0; j < c.n; ++j) e(0, j) += w.e_prime(i, j) * p(i, j);
  Matrix out = add_row_broadcast(secret_term(w, d), e);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < c.n; ++j) out(i, j) += static_cast<double>(k(i, j)) * c.q;
  return out;
}

inline PllRound sample_round(const PllWeights& w, std::size_t d, Rng& rng) {
  const auto& c = w.config;
  PllRound r;
  r.p = Matrix(c.m_prime, c.n);
  std::bernoulli_distribution bern(c.p_bern);
  for (auto& v : r.p.data()) v = bern(rng) ? 1.0 : 0.0;
  const long long kq = round_q(c.q);
  std::uniform_int_distribution<long long> kd(-kq, kq);
  r.k = IntMatrix(d, c.n);
  for (auto& v : r.k.data()) v = kd(rng);
  r.qt = build_qt(w, d, r.p, r.k);
  return r;
}

/// y = x A + Q_t in exact double arithmetic.
inline Matrix pll_forward_reference(const Matrix& x, const PllWeights& w, const PllRound& round) {
  require_shape(x, round.qt.rows(), w.config.m, "PLL input");
  return matmul(x, w.effective_a()) + round.qt;
}

/// Bound on |E_{., j}| from E': the sum of |e'_{i,j}| over i.
inline Matrix noise_bound(const PllWeights& w) {
  Matrix out(1, w.config.n);
  for (std::size_t i = 0; i < w.config.m_prime; ++i)
    for (std::size_t j = 0; j < w.config.n; ++j) out(0, j) += std::abs(w.e_prime(i, j));
  return out;
}

}  // namespace privlora::pll
