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
#include <numeric>
#include <random>
#include <tuple>
#include <vector>

#include "privlora/common/error.hpp"
#include "privlora/pll/train.hpp"
#include "privlora/toy/autograd.hpp"
#include "privlora/toy/model.hpp"

namespace privlora::toy {

struct ToyExample {
  std::vector<std::uint8_t> tokens;
  std::size_t label = 0;
};

/// Digit-pair classification. Class c owns the digits 2c and 2c+1; a
/// sequence holds `dominant` digits of its class among uniform random
/// digits, then '='. The answer is the label token after '='.
struct DigitTask {
  std::size_t classes = 4;
  std::size_t length = 8;
  std::size_t dominant = 5;

  std::vector<std::uint8_t> label_tokens() const {
    std::vector<std::uint8_t> out(classes);
    for (std::size_t c = 0; c < classes; ++c) out[c] = static_cast<std::uint8_t>('a' + c);
    return out;
  }

  ToyExample sample(Rng& rng) const {
    if (classes == 0 || classes > 5 || dominant > length) throw ParameterError("invalid digit task");
    std::uniform_int_distribution<std::size_t> cls(0, classes - 1), digit(0, 9), bit(0, 1);
    ToyExample ex;
    ex.label = cls(rng);
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t dgt = i < dominant ? 2 * ex.label + bit(rng) : digit(rng);
      ex.tokens.push_back(static_cast<std::uint8_t>('0' + dgt));
    }
    std::shuffle(ex.tokens.begin(), ex.tokens.end(), rng);
    ex.tokens.push_back('=');
    return ex;
  }

  std::vector<ToyExample> dataset(std::size_t n, Rng& rng) const {
    std::vector<ToyExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
  }
};

/// Index of the largest label-token logit in the last row.
inline std::size_t predict_label(const Matrix& logits, const std::vector<std::uint8_t>& labels) {
  std::size_t best = 0;
  const std::size_t last = logits.rows() - 1;
  for (std::size_t c = 1; c < labels.size(); ++c)
    if (logits(last, labels[c]) > logits(last, labels[best])) best = c;
  return best;
}

inline double accuracy(const ToyModel& m, const std::vector<ToyExample>& data,
                       const std::vector<std::uint8_t>& labels, const LoraCall& lora) {
  if (data.empty()) throw DimensionError("empty evaluation set");
  std::size_t hit = 0;
  for (const auto& ex : data) hit += predict_label(forward(m, ex.tokens, lora), labels) == ex.label ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

/// Sets up every site as a PLL adapter. q at a site is `q_mult` times the
/// std of the base projection x W over `calib`; alpha / r is folded into A1.
inline void wrap_pll(ToyModel& m, const std::vector<ToyExample>& calib, double q_mult, Rng& rng) {
  if (calib.empty()) throw DimensionError("empty calibration set");
  if (!(q_mult > 0)) throw ParameterError("q multiplier must be positive");
  const auto sites = m.sites();
  std::vector<double> sum(m.adapters.size()), sq(m.adapters.size()), cnt(m.adapters.size());
  auto zero_rng = make_rng(0);
  const LoraCall base = plaintext_lora(m, zero_rng);
  for (const auto& ex : calib) {
    SplitForward f(m, ex.tokens);
    while (!f.done()) {
      const SplitPoint p = f.pending();
      const Matrix xw = matmul(f.lora_input(), m.layers[p.layer].proj(p.target));
      for (double v : xw.data()) {
        sum[p.index()] += v;
        sq[p.index()] += v * v;
        cnt[p.index()] += 1;
      }
      f.resume(base(p, f.lora_input()));
    }
  }
  for (const auto& p : sites) {
    LoraAdapter& a = m.adapter(p);
    if (a.pll) throw ParameterError("adapter at " + to_string(p) + " is already wrapped");
    const std::size_t i = p.index();
    const double mean = sum[i] / cnt[i];
    const double sd = std::sqrt(std::max(sq[i] / cnt[i] - mean * mean, 0.0));
    if (!(sd > 0)) throw ParameterError("degenerate calibration at " + to_string(p));
    auto cfg = pll::PllConfig::make(m.config.d_model, m.config.d_model, q_mult * sd, a.r);
    pll::PllWeights w = pll::pll_init(cfg, rng);
    w.a1 = a.scale() * a.a1;
    w.a2 = a.a2;
    a.pll = std::move(w);
  }
}

/// Adam over a fixed list of parameter matrices.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
    if (m_.empty()) {
      for (Matrix* p : params) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k]->data();
      const auto& g = grads[k].data();
      auto& m = m_[k].data();
      auto& v = v_[k].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1_ * m[i] + (1 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1 - b2_) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

/// Trainable matrices: A1 and A2 per site, plus E' for PLL sites. The base
/// weights, s and q are never listed.
inline std::vector<Matrix*> trainable(ToyModel& m) {
  std::vector<Matrix*> out;
  for (const auto& p : m.sites()) {
    LoraAdapter& a = m.adapter(p);
    if (a.pll) {
      out.push_back(&a.pll->a1);
      out.push_back(&a.pll->a2);
      out.push_back(&a.pll->e_prime);
    } else {
      out.push_back(&a.a1);
      out.push_back(&a.a2);
    }
  }
  return out;
}

/// Activations feeding a PLL site's two linear blocks, recorded for the
/// preconditioned step. `param` indexes the site's A1 in the parameter list.
struct PllTrace {
  std::size_t param = 0;
  ad::Var shifted;  // x + s
  ad::Var inner;    // (x + s) A1
};

/// Batched training forward on a tape. PLL sites use the training form
/// ((x + s) A + colsum E') mod q with a straight-through gradient. Returns
/// the B x classes label logits of each sequence's last position.
inline ad::Var tape_forward(ad::Tape& tape, const ToyModel& m, const std::vector<const ToyExample*>& batch,
                            const std::vector<std::uint8_t>& labels, const std::vector<Matrix*>& params,
                            std::vector<Matrix>& grads, std::vector<PllTrace>* traces = nullptr) {
  const auto& cfg = m.config;
  const std::size_t t = batch.at(0)->tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.head_dim();
  std::vector<ad::Var> rows;
  for (const auto* ex : batch) {
    if (ex->tokens.size() != t) throw DimensionError("batch sequences must share a length");
    rows.push_back(tape.constant(embed_tokens(m, ex->tokens)));
  }
  ad::Var h = tape.concat_rows(rows);

  std::vector<ad::Var> pvars;
  for (std::size_t k = 0; k < params.size(); ++k) pvars.push_back(tape.param(*params[k], &grads[k]));
  std::size_t pk = 0;

  const Matrix mask = causal_mask(t, cfg.mask);
  const double inv_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::uint32_t l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = m.layers[l];
    const ad::Var xn = tape.layer_norm(h, kNormEps);
    ad::Var proj[kTargetsPerLayer];
    for (std::size_t ti = 0; ti < kTargetsPerLayer; ++ti) {
      const SplitPoint p{l, static_cast<Target>(ti)};
      ad::Var base = tape.matmul(xn, tape.constant(w.proj(p.target)));
      if (m.has_adapter(p)) {
        const LoraAdapter& a = m.adapter(p);
        ad::Var bypass;
        if (a.pll) {
          const std::size_t first = pk;
          const ad::Var a1 = pvars[pk++], a2 = pvars[pk++], ep = pvars[pk++];
          const ad::Var shifted = tape.add_row(xn, tape.constant(a.pll->s));
          const ad::Var inner = tape.matmul(shifted, a1);
          if (traces) traces->push_back({first, shifted, inner});
          bypass = tape.add_row(tape.matmul(inner, a2), tape.colsum(ep));
          bypass = tape.mod_q(bypass, a.pll->config.q);
        } else {
          const ad::Var a1 = pvars[pk++], a2 = pvars[pk++];
          bypass = tape.scale(tape.matmul(tape.matmul(xn, a1), a2), a.scale());
        }
        base = tape.add(base, bypass);
      }
      proj[ti] = base;
    }
    std::vector<ad::Var> seqs;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<ad::Var> heads;
      for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
        auto part = [&](ad::Var v) { return tape.slice_cols(tape.slice_rows(v, b * t, (b + 1) * t), hd * dh, (hd + 1) * dh); };
        const ad::Var qh = part(proj[0]), kh = part(proj[1]), vh = part(proj[2]);
        ad::Var s = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_dh);
        s = cfg.mask == MaskMode::kAdditive ? tape.add_const(s, mask) : tape.mul_const(s, mask);
        heads.push_back(tape.matmul(tape.softmax_rows(s), vh));
      }
      seqs.push_back(tape.concat_cols(heads));
    }
    h = tape.add(h, tape.matmul(tape.concat_rows(seqs), tape.constant(w.wo)));
    const ad::Var mid = tape.relu(tape.matmul(tape.layer_norm(h, kNormEps), tape.constant(w.w1)));
    h = tape.add(h, tape.matmul(mid, tape.constant(w.w2)));
  }
  std::vector<ad::Var> last;
  for (std::size_t b = 0; b < batch.size(); ++b) last.push_back(tape.slice_rows(h, b * t + t - 1, b * t + t));
  Matrix head(d, labels.size());
  for (std::size_t c = 0; c < labels.size(); ++c)
    for (std::size_t j = 0; j < d; ++j) head(j, c) = m.embed(labels[c], j);
  const ad::Var z = tape.matmul(tape.layer_norm(tape.concat_rows(last), kNormEps), tape.constant(head));
  return tape.scale(z, 1.0 / std::sqrt(static_cast<double>(d)));
}

/// Damped Gauss-Newton preconditioning of each PLL site's gradients, the
/// whitened step of pll_train_step: A1 over x + s, then A2 and E' jointly
/// over [(x + s) A1 | 1].
inline void whiten_pll_grads(const ad::Tape& tape, const std::vector<PllTrace>& traces,
                             std::vector<Matrix>& grads) {
  using pll::detail::from_eigen;
  using pll::detail::to_eigen;
  for (const auto& tr : traces) {
    const Eigen::MatrixXd xs = to_eigen(tape.value(tr.shifted));
    const double scale = 1.0 / static_cast<double>(xs.rows());
    Matrix& g1 = grads[tr.param];
    Matrix& g2 = grads[tr.param + 1];
    Matrix& ge = grads[tr.param + 2];
    g1 = from_eigen(pll::detail::gauss_newton_solve(xs, to_eigen(g1), scale));
    const auto r = static_cast<Eigen::Index>(g2.rows());
    const auto mp = static_cast<Eigen::Index>(ge.rows());
    Eigen::MatrixXd g(r + mp, static_cast<Eigen::Index>(g2.cols()));
    g.topRows(r) = to_eigen(g2);
    g.bottomRows(mp) = to_eigen(ge);
    const Eigen::MatrixXd feats = pll::detail::with_ones(to_eigen(tape.value(tr.inner)), ge.rows());
    const Eigen::MatrixXd st = pll::detail::gauss_newton_solve(feats, g, scale);
    g2 = from_eigen(st.topRows(r));
    ge = from_eigen(st.bottomRows(mp));
  }
}

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch = 16;
  double lr = 1e-2;      // Adam, plain adapters
  double pll_lr = 0.03;  // whitened gradient step, PLL adapters
  std::uint64_t seed = 1;
  /// False trains PLL adapters with Adam at `lr` like plain ones.
  bool whiten_pll = true;
};

struct TrainResult {
  std::vector<double> losses;  // one per step, before the update
};

/// Trains the adapters only; base weights are read, never written.
inline TrainResult train_toy_lora(ToyModel& m, const std::vector<ToyExample>& data,
                                  const std::vector<std::uint8_t>& labels, const TrainOptions& opt) {
  if (data.empty()) throw DimensionError("empty training set");
  if (opt.batch == 0) throw ParameterError("batch size must be positive");
  TrainResult res;
  const auto params = trainable(m);
  std::vector<bool> whitened(params.size(), false);
  if (opt.whiten_pll) {
    std::size_t k = 0;
    for (const auto& p : m.sites()) {
      const std::size_t n = m.adapter(p).pll ? 3 : 2;
      for (std::size_t i = 0; i < n; ++i) whitened[k + i] = n == 3;
      k += n;
    }
  }
  std::vector<Matrix*> adam_params;
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!whitened[k]) adam_params.push_back(params[k]);
  Adam adam(opt.lr);
  auto rng = make_rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t step = 0; step < opt.steps; ++step) {
    std::vector<const ToyExample*> batch;
    std::vector<std::size_t> y;
    for (std::size_t b = 0; b < opt.batch; ++b) {
      batch.push_back(&data[pick(rng)]);
      y.push_back(batch.back()->label);
    }
    std::vector<Matrix> grads(params.size());
    ad::Tape tape;
    std::vector<PllTrace> traces;
    const ad::Var loss = tape.cross_entropy(tape_forward(tape, m, batch, labels, params, grads, &traces), y);
    const double lv = tape.value(loss)(0, 0);
    if (!std::isfinite(lv)) throw DivergenceError("toy training loss is not finite at step " + std::to_string(step));
    res.losses.push_back(lv);
    tape.backward(loss);
    for (std::size_t k = 0; k < params.size(); ++k)
      if (grads[k].empty()) grads[k] = Matrix(params[k]->rows(), params[k]->cols());
    if (opt.whiten_pll) whiten_pll_grads(tape, traces, grads);
    std::vector<Matrix> adam_grads;
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (whitened[k])
        *params[k] = *params[k] - opt.pll_lr * grads[k];
      else
        adam_grads.push_back(std::move(grads[k]));
    }
    if (!adam_params.empty()) adam.step(adam_params, adam_grads);
  }
  return res;
}

/// Mean of the first and last `window` losses.
inline std::pair<double, double> loss_ends(const std::vector<double>& losses, std::size_t window = 20) {
  if (losses.empty()) throw DimensionError("empty loss history");
  const std::size_t w = std::min(window, losses.size());
  const double head = std::accumulate(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(w), 0.0) / w;
  const double tail = std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(w), losses.end(), 0.0) / w;
  return {head, tail};
}

struct DigitRun {
  ToyModel model;
  std::vector<double> losses;
  double first_loss = 0;  // mean of the first 10 steps
  double last_loss = 0;   // mean of the last 10 steps
  double accuracy = 0;    // held-out, plaintext adapter path
};

/// Trains a default toy model on the digit task: 512 training and 256
/// held-out examples, PLL-wrapped first when `use_pll` is set.
inline DigitRun run_digit_task(bool use_pll, std::uint64_t seed, TrainOptions opt = {},
                               const ToyModelConfig& cfg = {}) {
  DigitTask task;
  auto rng = make_rng(seed);
  const auto train = task.dataset(512, rng);
  const auto test = task.dataset(256, rng);
  auto mrng = make_rng(100 + seed);
  DigitRun out;
  out.model = make_toy_model(cfg, mrng);
  if (use_pll) {
    auto prng = make_rng(200 + seed);
    wrap_pll(out.model, {train.begin(), train.begin() + 32}, 4.0, prng);
  }
  opt.seed = seed;
  out.losses = train_toy_lora(out.model, train, task.label_tokens(), opt).losses;
  if (!out.losses.empty()) std::tie(out.first_loss, out.last_loss) = loss_ends(out.losses, 10);
  auto erng = make_rng(7);
  out.accuracy = accuracy(out.model, test, task.label_tokens(), plaintext_lora(out.model, erng));
  return out;
}

}  // namespace privlora::toy
