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

#include <Eigen/Dense>

#include "privlora/pll/pll.hpp"

namespace privlora::pll {

/// Loss over the layer output; writes dLoss/dy into `grad`.
using LossFn = std::function<double(const Matrix& y, const Matrix& target, Matrix& grad)>;

/// Mean squared error averaged over all entries.
inline double mse_loss(const Matrix& y, const Matrix& target, Matrix& grad) {
  if (!y.same_shape(target)) throw DimensionError("loss: output and target shapes differ");
  grad = Matrix(y.rows(), y.cols());
  const double inv = 1.0 / static_cast<double>(y.size());
  double loss = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double diff = y.data()[i] - target.data()[i];
    loss += diff * diff * inv;
    grad.data()[i] = 2 * diff * inv;
  }
  return loss;
}

/// Mean squared wrap-around distance: errors are reduced mod q first, so an
/// output congruent to its target costs nothing.
inline LossFn modular_mse_loss(double q) {
  return [q](const Matrix& y, const Matrix& target, Matrix& grad) {
    if (!y.same_shape(target)) throw DimensionError("loss: output and target shapes differ");
    grad = Matrix(y.rows(), y.cols());
    const double inv = 1.0 / static_cast<double>(y.size());
    double loss = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double diff = centered_mod(y.data()[i] - target.data()[i], q);
      loss += diff * diff * inv;
      grad.data()[i] = 2 * diff * inv;
    }
    return loss;
  };
}

/// Training-time forward: (x + s) A + x' E', reduced mod q. No dropout mask.
inline Matrix pll_train_forward(const Matrix& x, const PllWeights& w) {
  require_shape(x, x.rows(), w.config.m, "PLL input");
  Matrix e(1, w.config.n);
  for (std::size_t i = 0; i < w.config.m_prime; ++i)
    for (std::size_t j = 0; j < w.config.n; ++j) e(0, j) += w.e_prime(i, j);
  Matrix pre = add_row_broadcast(matmul(x, w.effective_a()) + secret_term(w, x.rows()), e);
  return demodulate(pre, w.config.q);
}

struct PllGrads {
  Matrix a;
  Matrix a1;
  Matrix a2;
  Matrix e_prime;
};

/// Gradients of the trainable weights given dLoss/dy. The mod-q reduction
/// passes gradients straight through.
inline PllGrads pll_backward(const Matrix& x, const PllWeights& w, const Matrix& dy) {
  const auto& c = w.config;
  Matrix xs = x;
  if (w.s.rows() == 1) {
    xs = add_row_broadcast(x, w.s);
  } else {
    check_rows(w, x.rows());
    xs = x + w.s;
  }
  PllGrads g;
  if (c.dense()) {
    g.a = matmul(transpose(xs), dy);
  } else {
    g.a2 = matmul(transpose(matmul(xs, w.a1)), dy);
    g.a1 = matmul(transpose(xs), matmul(dy, transpose(w.a2)));
  }
  g.e_prime = Matrix(c.m_prime, c.n);
  for (std::size_t i = 0; i < dy.rows(); ++i)
    for (std::size_t j = 0; j < c.n; ++j) {
      const double v = dy(i, j);
      for (std::size_t r = 0; r < c.m_prime; ++r) g.e_prime(r, j) += v;
    }
  return g;
}

enum class StepRule {
  /// Plain gradient descent.
  kGradient,
  /// Gradient preconditioned by the inverse Gauss-Newton matrix of each
  /// linear block. The secret shifts every input by s with |s| >> |x|, which
  /// leaves plain gradient descent badly conditioned along s.
  kWhitened,
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

inline Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix out(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = e(i, j);
  return out;
}

/// Solves (scale * F^T F + damping) S = G for the feature matrix F.
inline Eigen::MatrixXd gauss_newton_solve(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g, double scale) {
  Eigen::MatrixXd p = scale * f.transpose() * f;
  const double damping = 1e-6 * std::max(p.trace() / static_cast<double>(p.rows()), 1e-12);
  p.diagonal().array() += damping;
  return p.ldlt().solve(g);
}

/// Features feeding one linear block: [z | ones(d, m')].
inline Eigen::MatrixXd with_ones(const Eigen::MatrixXd& z, std::size_t m_prime) {
  Eigen::MatrixXd f(z.rows(), z.cols() + static_cast<Eigen::Index>(m_prime));
  f.leftCols(z.cols()) = z;
  f.rightCols(static_cast<Eigen::Index>(m_prime)).setOnes();
  return f;
}

}  // namespace detail

/// One step on A (or A1, A2) and E'; s, x' and q never change. Returns the
/// pre-step loss.
inline double pll_train_step(PllWeights& w, const Matrix& x, const Matrix& target, const LossFn& loss_fn, double lr,
                             StepRule rule = StepRule::kWhitened) {
  const Matrix y = pll_train_forward(x, w);
  Matrix dy;
  const double loss = loss_fn(y, target, dy);
  if (!std::isfinite(loss)) throw DivergenceError("PLL training loss is not finite");
  if (lr == 0) return loss;
  const PllGrads g = pll_backward(x, w, dy);
  const auto& c = w.config;
  if (rule == StepRule::kGradient) {
    if (c.dense()) {
      w.a = w.a - lr * g.a;
    } else {
      w.a1 = w.a1 - lr * g.a1;
      w.a2 = w.a2 - lr * g.a2;
    }
    w.e_prime = w.e_prime - lr * g.e_prime;
    return loss;
  }

  // Gauss-Newton curvature of a mean over d x n entries.
  const double scale = 2.0 / static_cast<double>(y.size());
  const Eigen::MatrixXd xs = detail::to_eigen(w.s.rows() == 1 ? add_row_broadcast(x, w.s) : x + w.s);
  const auto mr = static_cast<Eigen::Index>(c.dense() ? c.m : c.rank);
  Eigen::MatrixXd feats;
  Eigen::MatrixXd grad(mr + static_cast<Eigen::Index>(c.m_prime), static_cast<Eigen::Index>(c.n));
  if (c.dense()) {
    feats = detail::with_ones(xs, c.m_prime);
    grad.topRows(mr) = detail::to_eigen(g.a);
  } else {
    feats = detail::with_ones(xs * detail::to_eigen(w.a1), c.m_prime);
    grad.topRows(mr) = detail::to_eigen(g.a2);
    const Eigen::MatrixXd s1 = detail::gauss_newton_solve(xs, detail::to_eigen(g.a1), scale);
    w.a1 = w.a1 - lr * detail::from_eigen(s1);
  }
  grad.bottomRows(static_cast<Eigen::Index>(c.m_prime)) = detail::to_eigen(g.e_prime);
  const Eigen::MatrixXd st = detail::gauss_newton_solve(feats, grad, scale);
  Matrix& top = c.dense() ? w.a : w.a2;
  top = top - lr * detail::from_eigen(st.topRows(mr));
  w.e_prime = w.e_prime - lr * detail::from_eigen(st.bottomRows(static_cast<Eigen::Index>(c.m_prime)));
  return loss;
}

/// q such that the pre-modulus signal has standard deviation q / 4.
inline double calibrate_q(const Matrix& signal) {
  double mean = 0;
  for (double v : signal.data()) mean += v;
  mean /= static_cast<double>(signal.size());
  double var = 0;
  for (double v : signal.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(signal.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0)) throw ParameterError("cannot calibrate q on a constant signal");
  return 4.0 * sd;
}

}  // namespace privlora::pll
