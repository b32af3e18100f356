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

#include <gtest/gtest.h>

#include <cmath>

#include "privlora/toy.hpp"

namespace privlora::toy {
namespace {

ToyModelConfig small_config() {
  ToyModelConfig c;
  c.vocab = 128;
  c.layers = 2;
  c.d_model = 16;
  c.heads = 2;
  c.mlp_mult = 2;
  c.rank = 4;
  c.alpha = 8;
  return c;
}

ToyModel trained_like(const ToyModelConfig& cfg, std::uint64_t seed) {
  auto rng = make_rng(seed);
  ToyModel m = make_toy_model(cfg, rng);
  for (auto& a : m.adapters)
    if (a) a->a2 = gaussian_matrix(a->r, cfg.d_model, 0.3, rng);
  return m;
}

std::vector<std::uint8_t> tokens_of(std::size_t n, std::size_t vocab, Rng& rng) {
  std::uniform_int_distribution<std::size_t> tok(0, vocab - 1);
  std::vector<std::uint8_t> out(n);
  for (auto& t : out) t = static_cast<std::uint8_t>(tok(rng));
  return out;
}

TEST(ToyConfig, Validation) {
  EXPECT_NO_THROW(ToyModelConfig{}.validate());
  auto c = small_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.rank = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c.targets.clear();
  EXPECT_NO_THROW(c.validate());
  c = small_config();
  c.targets = {Target::kV, Target::kV};
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Attention, SoftmaxRowsSumToOne) {
  auto rng = make_rng(1);
  const Matrix x = gaussian_matrix(7, 9, 5.0, rng);
  const Matrix p = softmax_rows(x);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  const Matrix masked = softmax_rows(apply_mask(gaussian_matrix(6, 6, 3.0, rng), causal_mask(6, MaskMode::kAdditive),
                                                MaskMode::kAdditive));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      s += masked(i, j);
      if (j > i) {
        EXPECT_EQ(masked(i, j), 0.0);
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Attention, SingleTokenReturnsValueRow) {
  auto rng = make_rng(2);
  const Matrix q = gaussian_matrix(1, 8, 1.0, rng);
  const Matrix k = gaussian_matrix(1, 8, 1.0, rng);
  const Matrix v = gaussian_matrix(1, 8, 1.0, rng);
  EXPECT_EQ(attention(q, k, v, 2, causal_mask(1, MaskMode::kAdditive), MaskMode::kAdditive), v);
}

// Dense-loop reference with its own exp/normalize.
Matrix brute_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads, bool multiplicative) {
  const std::size_t t = q.rows(), dh = q.cols() / heads;
  Matrix out(t, q.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> w(t);
      double mx = -1e300;
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        s /= std::sqrt(static_cast<double>(dh));
        if (multiplicative) {
          if (j > i) s = 0;
        } else if (j > i) {
          w[j] = -1;
          continue;
        }
        w[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0;
      for (std::size_t j = 0; j < t; ++j) {
        w[j] = (!multiplicative && j > i) ? 0.0 : std::exp(w[j] - mx);
        z += w[j];
      }
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < t; ++j) acc += w[j] / z * v(j, h * dh + c);
        out(i, h * dh + c) = acc;
      }
    }
  }
  return out;
}

TEST(Attention, MatchesBruteForce) {
  auto rng = make_rng(3);
  for (auto mode : {MaskMode::kAdditive, MaskMode::kMultiplicative}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix q = gaussian_matrix(6, 12, 1.0, rng);
      const Matrix k = gaussian_matrix(6, 12, 1.0, rng);
      const Matrix v = gaussian_matrix(6, 12, 1.0, rng);
      const Matrix got = attention(q, k, v, 3, causal_mask(6, mode), mode);
      EXPECT_LT(max_abs_diff(got, brute_attention(q, k, v, 3, mode == MaskMode::kMultiplicative)), 1e-12);
    }
  }
}

TEST(Attention, RejectsShapeMismatch) {
  const Matrix a(3, 8), b(2, 8);
  EXPECT_THROW(attention(a, b, a, 2, causal_mask(3, MaskMode::kAdditive), MaskMode::kAdditive), DimensionError);
  EXPECT_THROW(attention(a, a, a, 3, causal_mask(3, MaskMode::kAdditive), MaskMode::kAdditive), DimensionError);
  EXPECT_THROW(attention(a, a, a, 2, causal_mask(2, MaskMode::kAdditive), MaskMode::kAdditive), DimensionError);
}

TEST(LoraForward, ZeroA2IsBaseProjection) {
  auto rng = make_rng(4);
  const Matrix x = gaussian_matrix(5, 16, 1.0, rng);
  const Matrix w = gaussian_matrix(16, 16, 1.0, rng);
  LoraAdapter a;
  a.r = 4;
  a.alpha = 8;
  a.a1 = gaussian_matrix(16, 4, 1.0, rng);
  a.a2 = Matrix(4, 16);
  EXPECT_EQ(lora_forward(x, w, a), matmul(x, w));
}

TEST(LoraForward, AlphaEqualsRank) {
  auto rng = make_rng(5);
  const Matrix x = gaussian_matrix(3, 8, 1.0, rng);
  const Matrix w = gaussian_matrix(8, 8, 1.0, rng);
  LoraAdapter a;
  a.r = 2;
  a.alpha = 2;
  a.a1 = gaussian_matrix(8, 2, 1.0, rng);
  a.a2 = gaussian_matrix(2, 8, 1.0, rng);
  EXPECT_LT(max_abs_diff(lora_forward(x, w, a), matmul(x, w) + matmul(matmul(x, a.a1), a.a2)), 1e-12);
}

TEST(LoraForward, RandomDimsMatchDenseOracle) {
  auto rng = make_rng(6);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = dim(rng), r = std::min(dim(rng), d), t = dim(rng);
    const Matrix x = gaussian_matrix(t, d, 1.0, rng);
    const Matrix w = gaussian_matrix(d, d, 1.0, rng);
    LoraAdapter a;
    a.r = r;
    a.alpha = 16;
    a.a1 = gaussian_matrix(d, r, 1.0, rng);
    a.a2 = gaussian_matrix(r, d, 1.0, rng);
    // x (W + alpha/r A1 A2), summed in a different order.
    Matrix merged = w;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < r; ++k) s += a.a1(i, k) * a.a2(k, j);
        merged(i, j) += a.scale() * s;
      }
    EXPECT_LE(relative_error(lora_forward(x, w, a), matmul(x, merged)), 1e-12);
  }
}

TEST(LoraForward, PllAdapterDemodulates) {
  auto rng = make_rng(7);
  const Matrix x = gaussian_matrix(4, 8, 1.0, rng);
  const Matrix w = gaussian_matrix(8, 8, 1.0, rng);
  LoraAdapter a;
  a.r = 2;
  a.pll = pll::pll_init(pll::PllConfig::make(8, 8, 3.0, 2), rng);
  a.pll->a2 = gaussian_matrix(2, 8, 1.0, rng);
  const auto round = pll::sample_round(*a.pll, 4, rng);
  const Matrix got = lora_forward(x, w, a, &round);
  const Matrix expect = matmul(x, w) + pll::demodulate(pll::pll_forward_reference(x, *a.pll, round), 3.0);
  EXPECT_EQ(got, expect);
  EXPECT_THROW(lora_forward(x, w, a), ParameterError);
}

TEST(LoraForward, RejectsBadShapes) {
  LoraAdapter a;
  a.r = 2;
  a.a1 = Matrix(8, 2);
  a.a2 = Matrix(2, 8);
  EXPECT_THROW(lora_forward(Matrix(3, 7), Matrix(8, 8), a), DimensionError);
  EXPECT_THROW(lora_forward(Matrix(3, 8), Matrix(8, 8), LoraAdapter{Matrix(8, 3), Matrix(3, 8), 1, 2, {}}),
               DimensionError);
}

TEST(SplitForward, FirstSiteSeesNormalizedEmbedding) {
  const ToyModel m = trained_like(small_config(), 8);
  auto rng = make_rng(9);
  const auto toks = tokens_of(6, 32, rng);
  auto srv = make_rng(1);
  const SplitForward s = pinf1(m, toks, {0, Target::kQ}, plaintext_lora(m, srv));
  EXPECT_EQ(s.lora_input(), layer_norm(embed_tokens(m, toks)));
  EXPECT_EQ(s.calls(), 0u);
}

TEST(SplitForward, EverySplitMatchesMonolithic) {
  for (bool wrap : {false, true}) {
    ToyModel m = trained_like(small_config(), 10);
    if (wrap) {
      DigitTask task;
      auto drng = make_rng(1);
      ToyModelConfig c = small_config();
      auto prng = make_rng(2);
      std::vector<ToyExample> calib;
      for (int i = 0; i < 4; ++i) calib.push_back({tokens_of(6, 32, drng), 0});
      wrap_pll(m, calib, 4.0, prng);
      for (auto& a : m.adapters)
        if (a) a->pll->a2 = gaussian_matrix(a->r, c.d_model, 0.3, prng);
    }
    auto rng = make_rng(11);
    const auto toks = tokens_of(7, 32, rng);
    auto r0 = make_rng(99);
    const Matrix whole = forward(m, toks, plaintext_lora(m, r0));
    Matrix first_xl;
    for (const auto& site : m.sites()) {
      // Sites inside one layer share x_L; sites in different layers do not.
      auto r1 = make_rng(99);
      const LoraCall server = plaintext_lora(m, r1);
      SplitForward state = pinf1(m, toks, site, server);
      EXPECT_EQ(state.pending(), site);
      if (site.layer == 0) {
        first_xl = state.lora_input();
      } else {
        EXPECT_NE(state.lora_input(), first_xl);
      }
      const Matrix resp = server(site, state.lora_input());
      EXPECT_EQ(pinf2(state, resp, server), whole) << to_string(site) << " wrap " << wrap;
    }
  }
}

TEST(SplitForward, ClientViewHoldsNoSecrets) {
  ToyModel m = trained_like(small_config(), 12);
  auto prng = make_rng(3);
  std::vector<ToyExample> calib{{{1, 2, 3, 4}, 0}};
  wrap_pll(m, calib, 4.0, prng);
  const ToyModel client = client_view(m);
  for (const auto& a : client.adapters) {
    if (!a) continue;
    EXPECT_TRUE(a->a1.empty());
    EXPECT_TRUE(a->pll->s.empty());
    EXPECT_TRUE(a->pll->a1.empty());
    EXPECT_GT(a->pll->config.q, 0.0);
  }
  const std::vector<std::uint8_t> toks{5, 6, 7, 8, 9};
  auto r0 = make_rng(4), r1 = make_rng(4);
  EXPECT_EQ(forward(client, toks, plaintext_lora(m, r0)), forward(m, toks, plaintext_lora(m, r1)));
}

TEST(SplitForward, StaleStateIsRejected) {
  const ToyModel m = trained_like(small_config(), 13);
  const std::vector<std::uint8_t> toks{1, 2, 3};
  SplitForward f(m, toks);
  EXPECT_THROW(f.logits(), ProtocolError);
  EXPECT_THROW(f.resume(Matrix(2, 16)), DimensionError);
  auto rng = make_rng(1);
  const LoraCall server = plaintext_lora(m, rng);
  while (!f.done()) f.resume(server(f.pending(), f.lora_input()));
  EXPECT_EQ(f.calls(), m.sites().size());
  EXPECT_THROW(f.resume(Matrix(3, 16)), ProtocolError);
  EXPECT_THROW(f.pending(), ProtocolError);
  EXPECT_THROW(pinf1(m, toks, {0, Target::kK}, server), ParameterError);
  EXPECT_THROW(pinf1(m, toks, {7, Target::kQ}, server), ParameterError);
  const std::vector<std::uint8_t> bad{200};
  EXPECT_THROW(SplitForward(m, bad), DimensionError);
}

TEST(Tape, TrainingForwardMatchesInference) {
  const ToyModel m = trained_like(small_config(), 14);
  ToyModel copy = m;
  DigitTask task;
  task.length = 6;
  task.dominant = 3;
  auto rng = make_rng(15);
  const auto data = task.dataset(3, rng);
  std::vector<const ToyExample*> batch;
  for (const auto& e : data) batch.push_back(&e);
  const auto labels = task.label_tokens();
  const auto params = trainable(copy);
  std::vector<Matrix> grads(params.size());
  ad::Tape tape;
  const Matrix z = tape.value(tape_forward(tape, copy, batch, labels, params, grads));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto srv = make_rng(0);
    const Matrix full = forward(m, data[b].tokens, plaintext_lora(m, srv));
    for (std::size_t c = 0; c < labels.size(); ++c)
      EXPECT_NEAR(z(b, c), full(full.rows() - 1, labels[c]), 1e-12);
  }
}

double batch_loss(ToyModel& m, const std::vector<const ToyExample*>& batch, const std::vector<std::uint8_t>& labels,
                  std::vector<Matrix>* grads_out = nullptr) {
  const auto params = trainable(m);
  std::vector<Matrix> grads(params.size());
  ad::Tape tape;
  std::vector<std::size_t> y;
  for (const auto* e : batch) y.push_back(e->label);
  const ad::Var loss = tape.cross_entropy(tape_forward(tape, m, batch, labels, params, grads), y);
  if (grads_out) {
    tape.backward(loss);
    *grads_out = grads;
  }
  return tape.value(loss)(0, 0);
}

TEST(Tape, GradientsMatchFiniteDifferences) {
  for (bool wrap : {false, true}) {
    ToyModel m = trained_like(small_config(), 16);
    DigitTask task;
    task.length = 5;
    task.dominant = 3;
    auto rng = make_rng(17);
    const auto data = task.dataset(2, rng);
    if (wrap) {
      auto prng = make_rng(5);
      wrap_pll(m, data, 1e6, prng);  // q large enough that nothing wraps
      for (auto& a : m.adapters)
        if (a) a->pll->a2 = gaussian_matrix(a->r, 16, 0.3, prng);
    }
    std::vector<const ToyExample*> batch{&data[0], &data[1]};
    const auto labels = task.label_tokens();
    std::vector<Matrix> grads;
    batch_loss(m, batch, labels, &grads);
    auto params = trainable(m);
    std::uniform_int_distribution<std::size_t> pick(0, 1000);
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (int probe = 0; probe < 3; ++probe) {
        const std::size_t i = pick(rng) % params[k]->size();
        double& w = params[k]->data()[i];
        const double keep = w;
        const double h = 1e-5;
        w = keep + h;
        const double up = batch_loss(m, batch, labels);
        w = keep - h;
        const double dn = batch_loss(m, batch, labels);
        w = keep;
        const double fd = (up - dn) / (2 * h);
        EXPECT_NEAR(grads[k].data()[i], fd, 1e-6 + 1e-4 * std::abs(fd)) << "param " << k << " wrap " << wrap;
      }
    }
  }
}

TEST(Adam, MinimizesQuadratic) {
  Matrix p{{3.0, -2.0}};
  Adam adam(0.1);
  for (int i = 0; i < 500; ++i) adam.step({&p}, {2.0 * p});
  EXPECT_LT(max_abs(p), 1e-2);
}

TEST(DigitTask, SamplesCarryTheirClass) {
  DigitTask task;
  auto rng = make_rng(18);
  for (const auto& ex : task.dataset(200, rng)) {
    ASSERT_EQ(ex.tokens.size(), task.length + 1);
    EXPECT_EQ(ex.tokens.back(), '=');
    EXPECT_LT(ex.label, task.classes);
    std::size_t own = 0;
    for (std::size_t i = 0; i < task.length; ++i)
      own += (ex.tokens[i] - '0') / 2 == static_cast<int>(ex.label) ? 1 : 0;
    EXPECT_GE(own, task.dominant);
  }
}

TEST(WrapPll, CalibratesModulusAndFoldsScale) {
  ToyModel m = trained_like(small_config(), 19);
  const ToyModel before = m;
  DigitTask task;
  auto rng = make_rng(20);
  const auto calib = task.dataset(8, rng);
  auto prng = make_rng(21);
  wrap_pll(m, calib, 4.0, prng);
  for (const auto& p : m.sites()) {
    const auto& a = m.adapter(p);
    ASSERT_TRUE(a.pll);
    EXPECT_EQ(a.pll->a1, a.scale() * before.adapter(p).a1);
    EXPECT_EQ(a.pll->a2, before.adapter(p).a2);
    EXPECT_GT(a.pll->config.q, 0.0);
    EXPECT_NEAR(a.pll->config.gamma, pll::PllConfig::min_gamma(16, a.pll->config.q), 1e-9);
  }
  // Layer 0 sees only embeddings, so its q can be recomputed directly.
  double sum = 0, sq = 0, n = 0;
  for (const auto& ex : calib) {
    const Matrix xw = matmul(layer_norm(embed_tokens(before, ex.tokens)), before.layers[0].wq);
    for (double v : xw.data()) {
      sum += v;
      sq += v * v;
      n += 1;
    }
  }
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(m.adapter({0, Target::kQ}).pll->config.q, 4.0 * sd, 1e-9 * sd);
  EXPECT_THROW(wrap_pll(m, calib, 4.0, prng), ParameterError);
  EXPECT_THROW(wrap_pll(m, {}, 4.0, prng), DimensionError);
}

TEST(ToyTraining, ZeroStepsLeavesAdapters) {
  ToyModel m = trained_like(small_config(), 22);
  const ToyModel before = m;
  DigitTask task;
  auto rng = make_rng(23);
  TrainOptions opt;
  opt.steps = 0;
  const auto res = train_toy_lora(m, task.dataset(8, rng), task.label_tokens(), opt);
  EXPECT_TRUE(res.losses.empty());
  EXPECT_EQ(serialize_model(m), serialize_model(before));
}

TEST(ToyTraining, BaseWeightsStayFrozen) {
  auto mrng = make_rng(24);
  ToyModel m = make_toy_model(small_config(), mrng);
  const ToyModel before = m;
  DigitTask task;
  auto rng = make_rng(25);
  const auto data = task.dataset(32, rng);
  auto prng = make_rng(26);
  wrap_pll(m, data, 4.0, prng);
  const ToyModel wrapped = m;
  TrainOptions opt;
  opt.steps = 5;
  opt.batch = 4;
  train_toy_lora(m, data, task.label_tokens(), opt);
  EXPECT_EQ(m.embed, before.embed);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (auto t : {&LayerWeights::wq, &LayerWeights::wk, &LayerWeights::wv, &LayerWeights::wo, &LayerWeights::w1,
                   &LayerWeights::w2})
      EXPECT_EQ(m.layers[l].*t, before.layers[l].*t);
  }
  for (const auto& p : m.sites()) {
    EXPECT_EQ(m.adapter(p).pll->s, wrapped.adapter(p).pll->s);
    EXPECT_EQ(m.adapter(p).pll->config.q, wrapped.adapter(p).pll->config.q);
    EXPECT_NE(m.adapter(p).pll->a2, wrapped.adapter(p).pll->a2);
  }
}

TEST(ToyTraining, DivergenceIsReported) {
  auto mrng = make_rng(27);
  ToyModel m = make_toy_model(small_config(), mrng);
  m.adapters[0]->a1(0, 0) = std::nan("");
  DigitTask task;
  auto rng = make_rng(28);
  TrainOptions opt;
  opt.steps = 3;
  EXPECT_THROW(train_toy_lora(m, task.dataset(8, rng), task.label_tokens(), opt), DivergenceError);
}

struct RunResult {
  double first = 0, last = 0, acc = 0;
};

RunResult run_task(bool use_pll, std::uint64_t seed) {
  const DigitRun r = run_digit_task(use_pll, seed);
  return {r.first_loss, r.last_loss, r.accuracy};
}

TEST(ToyTraining, PlainAndPllConverge) {
  const RunResult plain = run_task(false, 2);
  const RunResult priv = run_task(true, 2);
  EXPECT_LT(plain.last, 0.5 * plain.first);
  EXPECT_LT(priv.last, 0.5 * priv.first);
  EXPECT_LE(plain.acc - priv.acc, 0.05);
  EXPECT_GT(priv.acc, 0.9);
}

TEST(ToyCheckpoint, RoundTrip) {
  ToyModel m = trained_like(small_config(), 29);
  auto prng = make_rng(30);
  std::vector<ToyExample> calib{{{1, 2, 3}, 0}};
  const Bytes plain = serialize_model(m);
  EXPECT_EQ(serialize_model(deserialize_model(plain)), plain);
  wrap_pll(m, calib, 4.0, prng);
  const Bytes wrapped = serialize_model(m);
  const ToyModel back = deserialize_model(wrapped);
  EXPECT_EQ(serialize_model(back), wrapped);
  const std::vector<std::uint8_t> toks{3, 1, 4, 1, 5};
  auto r0 = make_rng(6), r1 = make_rng(6);
  EXPECT_EQ(forward(back, toks, plaintext_lora(back, r0)), forward(m, toks, plaintext_lora(m, r1)));
}

TEST(ToyCheckpoint, RejectsCorruptInput) {
  const Bytes good = serialize_model(trained_like(small_config(), 31));
  Bytes bad = good;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_model(bad), FormatError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(deserialize_model(bad), FormatError);
  bad = good;
  bad.resize(bad.size() / 2);
  EXPECT_THROW(deserialize_model(bad), FormatError);
  bad = good;
  bad[4] = 9;
  EXPECT_THROW(deserialize_model(bad), FormatError);
}

}  // namespace
}  // namespace privlora::toy
