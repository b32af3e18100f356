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
#include <functional>
#include <string>

#include "privlora/common/matrix.hpp"
#include "privlora/pll/pll.hpp"

namespace privlora::attack {

/// Query access to a layer: a 1 x m input row to a 1 x n output row.
using Oracle = std::function<Matrix(const Matrix&)>;

inline Matrix unit_row(std::size_t m, std::size_t i) {
  Matrix e(1, m);
  e(0, i) = 1.0;
  return e;
}

struct ExtractionResult {
  Matrix a;
  std::size_t queries = 0;               // unit-vector queries used to read A
  std::size_t verification_queries = 0;  // repeat and linearity checks
  bool consistent = true;
  std::string failure;
};

/// Reads A one row per unit-vector query, then spends two more queries
/// checking the answer: a repeat of the first query, and the all-ones input
/// against the row sum.
inline ExtractionResult extract_plain_linear(const Oracle& oracle, std::size_t m, double tol = 1e-9) {
  if (m == 0) throw DimensionError("extraction needs a positive input width");
  ExtractionResult res;
  Matrix first;
  for (std::size_t i = 0; i < m; ++i) {
    const Matrix row = oracle(unit_row(m, i));
    ++res.queries;
    if (row.rows() != 1) throw DimensionError("oracle must answer one row per query");
    if (i == 0) {
      first = row;
      res.a = Matrix(m, row.cols());
    }
    std::copy(row.row(0).begin(), row.row(0).end(), res.a.row(i).begin());
  }

  const Matrix again = oracle(unit_row(m, 0));
  Matrix sum(1, res.a.cols());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < res.a.cols(); ++j) sum(0, j) += res.a(i, j);
  const Matrix ones = oracle(Matrix(1, m, 1.0));
  res.verification_queries = 2;
  const double scale = std::max(1.0, max_abs(res.a));
  if (max_abs_diff(again, first) > tol * scale) {
    res.consistent = false;
    res.failure = "oracle answered a repeated query differently";
  } else if (max_abs_diff(ones, sum) > tol * scale * static_cast<double>(m)) {
    res.consistent = false;
    res.failure = "oracle is not linear";
  }
  return res;
}

/// Inference endpoint for a PLL layer with fresh round randomness per query.
/// `zero_k` drops the k q term (degenerate oracle for baselines).
inline Oracle make_pll_oracle(const pll::PllWeights& w, Rng& rng, bool zero_k = false) {
  return [&w, &rng, zero_k](const Matrix& x) {
    pll::PllRound round = pll::sample_round(w, x.rows(), rng);
    if (zero_k) {
      round.k = IntMatrix(round.k.rows(), round.k.cols());
      round.qt = pll::build_qt(w, x.rows(), round.p, round.k);
    }
    return pll::pll_forward_reference(x, w, round);
  };
}

struct ResidualStats {
  std::size_t trials = 0;
  std::size_t queries = 0;
  Matrix estimate;                 // least-squares A
  double residual_variance = 0.0;  // mean squared residual per entry
  double disagreement_rate = 0.0;  // trials whose repeated query disagreed
  double max_abs_error = 0.0;      // |estimate - truth|, when truth is given
};

/// Runs the unit-vector attack `trials` times against a noisy oracle.
///
/// Each trial asks the zero vector, then each unit vector, then the first
/// unit vector again. The model b = x A + c is fitted by least squares over
/// all trials; for this design that is the mean difference from the zero
/// query. A trial disagrees when its two answers to e_1 differ.
inline ResidualStats extraction_residuals(const Oracle& oracle, std::size_t m, std::size_t trials,
                                          const Matrix* truth = nullptr) {
  if (m == 0 || trials == 0) throw DimensionError("residual run needs m > 0 and trials > 0");
  ResidualStats st;
  st.trials = trials;
  std::vector<Matrix> zero(trials);
  std::vector<Matrix> rows(trials);
  std::size_t disagree = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    zero[t] = oracle(Matrix(1, m));
    Matrix r;
    for (std::size_t i = 0; i < m; ++i) {
      const Matrix b = oracle(unit_row(m, i));
      if (i == 0) r = Matrix(m, b.cols());
      std::copy(b.row(0).begin(), b.row(0).end(), r.row(i).begin());
    }
    const Matrix again = oracle(unit_row(m, 0));
    st.queries += m + 2;
    bool same = true;
    for (std::size_t j = 0; j < again.cols(); ++j) same &= (again(0, j) == r(0, j));
    disagree += same ? 0 : 1;
    rows[t] = std::move(r);
  }
  const std::size_t n = zero[0].cols();
  Matrix c(1, n);
  st.estimate = Matrix(m, n);
  for (std::size_t t = 0; t < trials; ++t) {
    c = c + zero[t];
    st.estimate = st.estimate + add_row_broadcast(rows[t], -1.0 * zero[t]);
  }
  c = (1.0 / static_cast<double>(trials)) * c;
  st.estimate = (1.0 / static_cast<double>(trials)) * st.estimate;

  const Matrix fitted_rows = add_row_broadcast(st.estimate, c);
  double ss = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t j = 0; j < n; ++j) ss += (zero[t](0, j) - c(0, j)) * (zero[t](0, j) - c(0, j));
    for (double v : (rows[t] - fitted_rows).data()) ss += v * v;
  }
  const double entries = static_cast<double>(trials * (m + 1) * n);
  const double params = static_cast<double>((m + 1) * n);
  st.residual_variance = trials > 1 ? ss / (entries - params) : 0.0;
  st.disagreement_rate = static_cast<double>(disagree) / static_cast<double>(trials);
  if (truth != nullptr) st.max_abs_error = max_abs_diff(st.estimate, *truth);
  return st;
}

}  // namespace privlora::attack
