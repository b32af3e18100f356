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
#include <vector>

#include "privlora/common/error.hpp"
#include "privlora/common/matrix.hpp"
#include "privlora/pll/pll.hpp"

namespace privlora::toy::ad {

struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape over dense matrices. Gradients only flow through nodes
/// that depend on a parameter leaf.
class Tape {
 public:
  Var constant(Matrix v) { return push(std::move(v), false, {}); }

  /// Leaf whose gradient is added into `*grad` by backward().
  Var param(const Matrix& v, Matrix* grad) {
    const Var out = push(v, true, {});
    sinks_.push_back({out.id, grad});
    return out;
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    return unary2(a, b, privlora::matmul(value(a), value(b)), [this, a, b](const Matrix& g) {
      if (live(a)) acc(a, privlora::matmul(g, privlora::transpose(value(b))));
      if (live(b)) acc(b, privlora::matmul(privlora::transpose(value(a)), g));
    });
  }

  Var add(Var a, Var b) {
    return unary2(a, b, value(a) + value(b), [this, a, b](const Matrix& g) {
      if (live(a)) acc(a, g);
      if (live(b)) acc(b, g);
    });
  }

  /// a + row, the 1 x n row broadcast over every row of a.
  Var add_row(Var a, Var row) {
    return unary2(a, row, add_row_broadcast(value(a), value(row)), [this, a, row](const Matrix& g) {
      if (live(a)) acc(a, g);
      if (live(row)) {
        Matrix s(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) s(0, j) += g(i, j);
        acc(row, s);
      }
    });
  }

  /// Sum over rows: m x n to 1 x n.
  Var colsum(Var a) {
    Matrix s(1, value(a).cols());
    for (std::size_t i = 0; i < value(a).rows(); ++i)
      for (std::size_t j = 0; j < s.cols(); ++j) s(0, j) += value(a)(i, j);
    const std::size_t rows = value(a).rows();
    return unary(a, std::move(s), [this, a, rows](const Matrix& g) {
      Matrix full(rows, g.cols());
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) full(i, j) = g(0, j);
      acc(a, full);
    });
  }

  Var scale(Var a, double c) {
    return unary(a, c * value(a), [this, a, c](const Matrix& g) { acc(a, c * g); });
  }

  /// Elementwise a + c or a * c with a constant c.
  Var add_const(Var a, const Matrix& c) {
    Matrix v = value(a);
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] += c.data()[i];
    return unary(a, std::move(v), [this, a](const Matrix& g) { acc(a, g); });
  }
  Var mul_const(Var a, const Matrix& c) {
    Matrix v = value(a);
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] *= c.data()[i];
    return unary(a, std::move(v), [this, a, c](const Matrix& g) {
      Matrix d = g;
      for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= c.data()[i];
      acc(a, d);
    });
  }

  Var relu(Var a) {
    Matrix v = value(a);
    for (double& x : v.data()) x = std::max(x, 0.0);
    return unary(a, std::move(v), [this, a](const Matrix& g) {
      Matrix d = g;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (value(a).data()[i] <= 0) d.data()[i] = 0;
      acc(a, d);
    });
  }

  Var transpose(Var a) {
    return unary(a, privlora::transpose(value(a)), [this, a](const Matrix& g) { acc(a, privlora::transpose(g)); });
  }

  /// Row standardization with eps, no gain or bias.
  Var layer_norm(Var a, double eps) {
    const Matrix& x = value(a);
    const double n = static_cast<double>(x.cols());
    Matrix y(x.rows(), x.cols());
    std::vector<double> inv(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double mean = 0;
      for (double v : x.row(i)) mean += v;
      mean /= n;
      double var = 0;
      for (double v : x.row(i)) var += (v - mean) * (v - mean);
      inv[i] = 1.0 / std::sqrt(var / n + eps);
      for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = (x(i, j) - mean) * inv[i];
    }
    const Var out = unary(a, std::move(y), {});
    nodes_[out.id].back = [this, a, out, inv, n](const Matrix& g) {
      const Matrix& y = value(out);
      Matrix d(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double mg = 0, mgy = 0;
        for (std::size_t j = 0; j < g.cols(); ++j) {
          mg += g(i, j);
          mgy += g(i, j) * y(i, j);
        }
        mg /= n;
        mgy /= n;
        for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = inv[i] * (g(i, j) - mg - y(i, j) * mgy);
      }
      acc(a, d);
    };
    return out;
  }

  Var softmax_rows(Var a) {
    const Var out = unary(a, toy_softmax(value(a)), {});
    nodes_[out.id].back = [this, a, out](const Matrix& g) {
      const Matrix& p = value(out);
      Matrix d(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double dot = 0;
        for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * p(i, j);
        for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = p(i, j) * (g(i, j) - dot);
      }
      acc(a, d);
    };
    return out;
  }

  Var slice_cols(Var a, std::size_t b, std::size_t e) {
    const std::size_t cols = value(a).cols();
    return unary(a, privlora::slice_cols(value(a), b, e), [this, a, b, cols](const Matrix& g) {
      Matrix d(g.rows(), cols);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) d(i, b + j) = g(i, j);
      acc(a, d);
    });
  }

  Var slice_rows(Var a, std::size_t b, std::size_t e) {
    const Matrix& x = value(a);
    if (b > e || e > x.rows()) throw DimensionError("row slice out of range");
    Matrix v(e - b, x.cols());
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(b * x.cols()),
              x.data().begin() + static_cast<std::ptrdiff_t>(e * x.cols()), v.data().begin());
    const std::size_t rows = x.rows();
    return unary(a, std::move(v), [this, a, b, rows](const Matrix& g) {
      Matrix d(rows, g.cols());
      std::copy(g.data().begin(), g.data().end(), d.data().begin() + static_cast<std::ptrdiff_t>(b * g.cols()));
      acc(a, d);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    std::size_t rows = value(parts.at(0)).rows(), cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw DimensionError("concat_cols row mismatch");
      cols += value(p).cols();
    }
    Matrix v(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < value(p).cols(); ++j) v(i, off + j) = value(p)(i, j);
      off += value(p).cols();
    }
    return many(parts, std::move(v), [this, parts](const Matrix& g) {
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t w = value(p).cols();
        if (live(p)) acc(p, privlora::slice_cols(g, off, off + w));
        off += w;
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    const std::size_t cols = value(parts.at(0)).cols();
    std::size_t rows = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw DimensionError("concat_rows column mismatch");
      rows += value(p).rows();
    }
    Matrix v(rows, cols);
    auto it = v.data().begin();
    for (Var p : parts) it = std::copy(value(p).data().begin(), value(p).data().end(), it);
    return many(parts, std::move(v), [this, parts, cols](const Matrix& g) {
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t r = value(p).rows();
        if (live(p)) {
          Matrix d(r, cols);
          std::copy(g.data().begin() + static_cast<std::ptrdiff_t>(off * cols),
                    g.data().begin() + static_cast<std::ptrdiff_t>((off + r) * cols), d.data().begin());
          acc(p, d);
        }
        off += r;
      }
    });
  }

  /// Centered mod q forward, identity backward (straight-through).
  Var mod_q(Var a, double q) {
    Matrix v = value(a);
    for (double& x : v.data()) x = pll::centered_mod(x, q);
    return unary(a, std::move(v), [this, a](const Matrix& g) { acc(a, g); });
  }

  /// Mean softmax cross-entropy of each row of `logits` against `labels`.
  Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
    const Matrix& z = value(logits);
    if (labels.size() != z.rows()) throw DimensionError("one label per logits row");
    const Matrix p = toy_softmax(z);
    double loss = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      if (labels[i] >= z.cols()) throw DimensionError("label out of range");
      loss -= std::log(std::max(p(i, labels[i]), 1e-300));
    }
    const double inv = 1.0 / static_cast<double>(z.rows());
    Matrix v(1, 1, loss * inv);
    return unary(logits, std::move(v), [this, logits, p, labels, inv](const Matrix& g) {
      Matrix d = p;
      for (std::size_t i = 0; i < d.rows(); ++i) d(i, labels[i]) -= 1.0;
      acc(logits, (g(0, 0) * inv) * d);
    });
  }

  /// Seeds d out / d out = 1 and sweeps the tape backwards.
  void backward(Var out) {
    if (value(out).size() != 1) throw DimensionError("backward needs a scalar output");
    for (auto& n : nodes_) n.grad = Matrix();
    nodes_[out.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.live || n.grad.empty() || !n.back) continue;
      n.back(n.grad);
    }
    for (const auto& s : sinks_) {
      const Matrix& g = nodes_[s.id].grad;
      if (g.empty()) continue;
      if (s.grad->empty()) *s.grad = Matrix(g.rows(), g.cols());
      *s.grad = *s.grad + g;
    }
  }

  static Matrix toy_softmax(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double mx = -INFINITY;
      for (double v : x.row(i)) mx = std::max(mx, v);
      double sum = 0;
      for (std::size_t j = 0; j < x.cols(); ++j) sum += out(i, j) = std::exp(x(i, j) - mx);
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= sum;
    }
    return out;
  }

 private:
  using Back = std::function<void(const Matrix&)>;
  struct Node {
    Matrix value;
    Matrix grad;
    bool live = false;
    Back back;
  };
  struct Sink {
    std::size_t id;
    Matrix* grad;
  };

  bool live(Var v) const { return nodes_[v.id].live; }

  void acc(Var v, const Matrix& g) {
    Matrix& dst = nodes_[v.id].grad;
    if (dst.empty())
      dst = g;
    else
      dst = dst + g;
  }

  Var push(Matrix v, bool live, Back back) {
    nodes_.push_back({std::move(v), Matrix(), live, std::move(back)});
    return {nodes_.size() - 1};
  }
  Var unary(Var a, Matrix v, Back back) { return push(std::move(v), live(a), live(a) ? std::move(back) : Back{}); }
  Var unary2(Var a, Var b, Matrix v, Back back) {
    const bool l = live(a) || live(b);
    return push(std::move(v), l, l ? std::move(back) : Back{});
  }
  Var many(const std::vector<Var>& parts, Matrix v, Back back) {
    bool l = false;
    for (Var p : parts) l = l || live(p);
    return push(std::move(v), l, l ? std::move(back) : Back{});
  }

  std::vector<Node> nodes_;
  std::vector<Sink> sinks_;
};

}  // namespace privlora::toy::ad
