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
#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "privlora/common/error.hpp"
#include "privlora/common/matrix.hpp"
#include "privlora/common/rng.hpp"
#include "privlora/pll/pll.hpp"

namespace privlora::toy {

enum class Target : std::uint8_t { kQ = 0, kK = 1, kV = 2 };
inline constexpr std::size_t kTargetsPerLayer = 3;

inline const char* target_name(Target t) {
  switch (t) {
    case Target::kQ: return "q";
    case Target::kK: return "k";
    case Target::kV: return "v";
  }
  return "?";
}

/// Additive adds M before the softmax; multiplicative scales the scores by M.
enum class MaskMode : std::uint8_t { kAdditive = 0, kMultiplicative = 1 };

struct ToyModelConfig {
  std::size_t vocab = 256;
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t mlp_mult = 4;
  std::vector<Target> targets{Target::kQ, Target::kV};
  double alpha = 8.0;
  std::size_t rank = 8;
  MaskMode mask = MaskMode::kAdditive;

  std::size_t head_dim() const { return d_model / heads; }
  std::size_t hidden() const { return d_model * mlp_mult; }

  void validate() const {
    if (vocab == 0 || layers == 0 || d_model == 0 || heads == 0 || mlp_mult == 0)
      throw ParameterError("toy model dimensions must be positive");
    if (d_model % heads != 0) throw ParameterError("d_model must be divisible by the head count");
    if (!targets.empty() && rank == 0) throw ParameterError("LoRA rank must be positive");
    if (!targets.empty() && !(alpha > 0)) throw ParameterError("LoRA alpha must be positive");
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (static_cast<std::size_t>(targets[i]) >= kTargetsPerLayer) throw ParameterError("unknown LoRA target");
      for (std::size_t j = 0; j < i; ++j)
        if (targets[i] == targets[j]) throw ParameterError("duplicate LoRA target");
    }
  }
};

/// One projection call site: where the client forward pauses for a LoRA call.
struct SplitPoint {
  std::uint32_t layer = 0;
  Target target = Target::kQ;

  std::size_t index() const { return layer * kTargetsPerLayer + static_cast<std::size_t>(target); }
  friend auto operator<=>(const SplitPoint&, const SplitPoint&) = default;
};

inline std::string to_string(const SplitPoint& p) {
  return "layer " + std::to_string(p.layer) + " w" + target_name(p.target);
}

/// h = x W + (alpha / r) x A1 A2. When `pll` is set it holds the trained
/// A1 and A2 with alpha / r already folded into A1, and a1/a2 here are unused.
struct LoraAdapter {
  Matrix a1;  // d_model x r
  Matrix a2;  // r x d_model
  double alpha = 1.0;
  std::size_t r = 1;
  std::optional<pll::PllWeights> pll;

  double scale() const { return alpha / static_cast<double>(r); }

  /// Server-side factors with the scale applied: x A1' A2' is the bypass.
  Matrix server_a1() const { return pll ? pll->a1 : scale() * a1; }
  const Matrix& server_a2() const { return pll ? pll->a2 : a2; }

  Matrix effective() const { return matmul(server_a1(), server_a2()); }
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix w1;              // d x hidden
  Matrix w2;              // hidden x d

  const Matrix& proj(Target t) const {
    switch (t) {
      case Target::kQ: return wq;
      case Target::kK: return wk;
      case Target::kV: return wv;
    }
    throw ParameterError("unknown target");
  }
};

/// Pre-norm transformer with a tied embedding head. The MLP blocks carry no
/// adapters. `adapters` is indexed by SplitPoint::index().
struct ToyModel {
  ToyModelConfig config;
  Matrix embed;  // vocab x d
  std::vector<LayerWeights> layers;
  std::vector<std::optional<LoraAdapter>> adapters;

  std::vector<SplitPoint> sites() const {
    std::vector<SplitPoint> out;
    for (std::uint32_t l = 0; l < layers.size(); ++l)
      for (std::size_t t = 0; t < kTargetsPerLayer; ++t)
        if (adapters[l * kTargetsPerLayer + t]) out.push_back({l, static_cast<Target>(t)});
    return out;
  }

  bool has_adapter(const SplitPoint& p) const {
    return p.layer < layers.size() && adapters[p.index()].has_value();
  }

  const LoraAdapter& adapter(const SplitPoint& p) const {
    if (!has_adapter(p)) throw ParameterError("no adapter at " + to_string(p));
    return *adapters[p.index()];
  }
  LoraAdapter& adapter(const SplitPoint& p) {
    if (!has_adapter(p)) throw ParameterError("no adapter at " + to_string(p));
    return *adapters[p.index()];
  }
};

/// Random base weights, and adapters at every configured target with
/// A1 ~ N(0, 1/d) and A2 = 0.
inline ToyModel make_toy_model(const ToyModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ToyModel m;
  m.config = cfg;
  const std::size_t d = cfg.d_model;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  m.embed = gaussian_matrix(cfg.vocab, d, 1.0, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerWeights w;
    w.wq = gaussian_matrix(d, d, sd, rng);
    w.wk = gaussian_matrix(d, d, sd, rng);
    w.wv = gaussian_matrix(d, d, sd, rng);
    w.wo = gaussian_matrix(d, d, sd, rng);
    w.w1 = gaussian_matrix(d, cfg.hidden(), sd, rng);
    w.w2 = gaussian_matrix(cfg.hidden(), d, 1.0 / std::sqrt(static_cast<double>(cfg.hidden())), rng);
    m.layers.push_back(std::move(w));
  }
  m.adapters.resize(cfg.layers * kTargetsPerLayer);
  for (std::uint32_t l = 0; l < cfg.layers; ++l) {
    for (Target t : cfg.targets) {
      LoraAdapter a;
      a.alpha = cfg.alpha;
      a.r = cfg.rank;
      a.a1 = gaussian_matrix(d, cfg.rank, sd, rng);
      a.a2 = Matrix(cfg.rank, d);
      m.adapters[SplitPoint{l, t}.index()] = std::move(a);
    }
  }
  return m;
}

/// Copy that keeps only what a client may hold: base weights, the adapter
/// sites, and each PLL modulus. Adapter factors and PLL secrets are dropped.
inline ToyModel client_view(const ToyModel& m) {
  ToyModel out = m;
  for (auto& a : out.adapters) {
    if (!a) continue;
    LoraAdapter shell;
    shell.alpha = a->alpha;
    shell.r = a->r;
    if (a->pll) {
      pll::PllWeights w;
      w.config = a->pll->config;
      shell.pll = std::move(w);
    }
    a = std::move(shell);
  }
  return out;
}

inline Matrix embed_tokens(const ToyModel& m, std::span<const std::uint8_t> tokens) {
  if (tokens.empty()) throw DimensionError("empty token sequence");
  Matrix x(tokens.size(), m.config.d_model);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= m.config.vocab) throw DimensionError("token outside the vocabulary");
    const auto src = m.embed.row(tokens[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return x;
}

inline constexpr double kNormEps = 1e-5;

/// Per-row standardization without learned gain or bias.
inline Matrix layer_norm(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0;
    for (double v : x.row(i)) mean += v;
    mean /= n;
    double var = 0;
    for (double v : x.row(i)) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var / n + kNormEps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean) * inv;
  }
  return out;
}

inline Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x.row(i)) mx = std::max(mx, v);
    double sum = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) sum += out(i, j) = std::exp(x(i, j) - mx);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

/// Causal mask: additive 0 / -inf, or multiplicative 1 / 0.
inline Matrix causal_mask(std::size_t t, MaskMode mode) {
  const double off = mode == MaskMode::kAdditive ? -std::numeric_limits<double>::infinity() : 0.0;
  const double on = mode == MaskMode::kAdditive ? 0.0 : 1.0;
  Matrix m(t, t, on);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m(i, j) = off;
  return m;
}

inline Matrix apply_mask(const Matrix& scores, const Matrix& mask, MaskMode mode) {
  require_shape(mask, scores.rows(), scores.cols(), "attention mask");
  Matrix out = scores;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mode == MaskMode::kAdditive)
      out.data()[i] += mask.data()[i];
    else
      out.data()[i] *= mask.data()[i];
  }
  return out;
}

/// Multi-head attention on already projected Q, K, V (T x d each); returns
/// the concatenated head outputs before the output projection.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads, const Matrix& mask,
                        MaskMode mode) {
  if (!q.same_shape(k) || !q.same_shape(v)) throw DimensionError("Q, K, V shapes differ");
  if (heads == 0 || q.cols() % heads != 0) throw DimensionError("width not divisible by the head count");
  const std::size_t dh = q.cols() / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(q.rows(), q.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Matrix kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Matrix vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Matrix p = softmax_rows(apply_mask(inv * matmul(qh, transpose(kh)), mask, mode));
    const Matrix oh = matmul(p, vh);
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < dh; ++j) out(i, h * dh + j) = oh(i, j);
  }
  return out;
}

/// Attention(X Wq, X Wk, X Wv) Wo with no adapters.
inline Matrix self_attention_forward(const Matrix& x, const LayerWeights& w, std::size_t heads, const Matrix& mask,
                                     MaskMode mode) {
  return matmul(attention(matmul(x, w.wq), matmul(x, w.wk), matmul(x, w.wv), heads, mask, mode), w.wo);
}

inline Matrix relu(Matrix x) {
  for (double& v : x.data()) v = std::max(v, 0.0);
  return x;
}

/// Logits of a final hidden state: layer_norm(h) E^T / sqrt(d).
inline Matrix output_logits(const ToyModel& m, const Matrix& h) {
  return (1.0 / std::sqrt(static_cast<double>(m.config.d_model))) * matmul(layer_norm(h), transpose(m.embed));
}

/// Raw adapter response for input rows x: the plain bypass, or for a PLL
/// adapter the server's x A + Q_t under `round`.
inline Matrix lora_response(const Matrix& x, const LoraAdapter& a, const pll::PllRound* round = nullptr) {
  if (!a.pll) return matmul(matmul(x, a.server_a1()), a.a2);
  if (round == nullptr) throw ParameterError("PLL adapter needs round randomness");
  return pll::pll_forward_reference(x, *a.pll, *round);
}

/// Client side: a PLL response is demodulated, a plain one is used as is.
inline Matrix bypass_from_response(const LoraAdapter& a, const Matrix& response) {
  return a.pll ? pll::demodulate(response, a.pll->config.q) : response;
}

/// h = x W + bypass.
inline Matrix lora_forward(const Matrix& x, const Matrix& w, const LoraAdapter& a,
                           const pll::PllRound* round = nullptr) {
  if (x.cols() != w.rows() || w.rows() != w.cols()) throw DimensionError("projection shape mismatch");
  const std::size_t d = w.rows();
  if (a.pll) {
    require_shape(a.pll->a1, d, a.pll->a1.cols(), "PLL A1");
  } else {
    require_shape(a.a1, d, a.r, "adapter A1");
    require_shape(a.a2, a.r, d, "adapter A2");
  }
  return matmul(x, w) + bypass_from_response(a, lora_response(x, a, round));
}

/// Serves one LoRA call: site, input rows x_L, returns the raw response.
using LoraCall = std::function<Matrix(const SplitPoint&, const Matrix&)>;

/// Plaintext server: plain adapters directly, PLL adapters with a fresh
/// round drawn from `rng` per call.
inline LoraCall plaintext_lora(const ToyModel& m, Rng& rng) {
  return [&m, &rng](const SplitPoint& p, const Matrix& x) {
    const LoraAdapter& a = m.adapter(p);
    if (!a.pll) return lora_response(x, a);
    const pll::PllRound round = pll::sample_round(*a.pll, x.rows(), rng);
    return lora_response(x, a, &round);
  };
}

/// Client forward pass as a resumable state machine. It runs plaintext
/// compute until the next adapter site, exposes x_L there, and continues
/// when resume() receives the server's response.
class SplitForward {
 public:
  SplitForward(const ToyModel& model, std::span<const std::uint8_t> tokens)
      : m_(&model), mask_(causal_mask(tokens.size(), model.config.mask)) {
    h_ = embed_tokens(model, tokens);
    advance();
  }

  bool done() const { return done_; }
  std::size_t calls() const { return calls_; }

  const SplitPoint& pending() const {
    if (done_) throw ProtocolError("forward pass already finished");
    return site_;
  }
  const Matrix& lora_input() const {
    pending();
    return xn_;
  }

  void resume(const Matrix& response) {
    pending();
    require_shape(response, xn_.rows(), m_->config.d_model, "LoRA response");
    const LoraAdapter& a = m_->adapter(site_);
    proj_[static_cast<std::size_t>(site_.target)] =
        matmul(xn_, m_->layers[site_.layer].proj(site_.target)) + bypass_from_response(a, response);
    ++calls_;
    ++target_;
    advance();
  }

  const Matrix& logits() const {
    if (!done_) throw ProtocolError("forward pass paused at " + to_string(site_));
    return logits_;
  }

 private:
  void advance() {
    const auto& cfg = m_->config;
    while (layer_ < m_->layers.size()) {
      const LayerWeights& w = m_->layers[layer_];
      if (target_ == 0) xn_ = layer_norm(h_);
      for (; target_ < kTargetsPerLayer; ++target_) {
        const SplitPoint p{static_cast<std::uint32_t>(layer_), static_cast<Target>(target_)};
        if (m_->has_adapter(p)) {
          site_ = p;
          return;
        }
        proj_[target_] = matmul(xn_, w.proj(p.target));
      }
      h_ = h_ + matmul(attention(proj_[0], proj_[1], proj_[2], cfg.heads, mask_, cfg.mask), w.wo);
      h_ = h_ + matmul(relu(matmul(layer_norm(h_), w.w1)), w.w2);
      ++layer_;
      target_ = 0;
    }
    logits_ = output_logits(*m_, h_);
    done_ = true;
  }

  const ToyModel* m_;
  Matrix mask_;
  Matrix h_;
  Matrix xn_;
  Matrix proj_[kTargetsPerLayer];
  Matrix logits_;
  std::size_t layer_ = 0;
  std::size_t target_ = 0;
  SplitPoint site_;
  std::size_t calls_ = 0;
  bool done_ = false;
};

/// Monolithic forward: every adapter call is served by `lora`.
inline Matrix forward(const ToyModel& m, std::span<const std::uint8_t> tokens, const LoraCall& lora) {
  SplitForward f(m, tokens);
  while (!f.done()) f.resume(lora(f.pending(), f.lora_input()));
  return f.logits();
}

/// Runs the client pass up to `split`, serving earlier sites with `earlier`.
/// The returned state is paused at `split` with x_L = lora_input().
inline SplitForward pinf1(const ToyModel& m, std::span<const std::uint8_t> tokens, const SplitPoint& split,
                          const LoraCall& earlier) {
  if (!m.has_adapter(split)) throw ParameterError("split point " + to_string(split) + " has no adapter");
  SplitForward f(m, tokens);
  while (!f.done() && f.pending() != split) f.resume(earlier(f.pending(), f.lora_input()));
  return f;
}

/// Feeds the response for the paused site and finishes the pass, serving
/// later sites with `later`.
inline Matrix pinf2(SplitForward& state, const Matrix& response, const LoraCall& later) {
  state.resume(response);
  while (!state.done()) state.resume(later(state.pending(), state.lora_input()));
  return state.logits();
}

}  // namespace privlora::toy
