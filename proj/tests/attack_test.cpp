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

#include "privlora/attack.hpp"

namespace privlora::attack {
namespace {

Oracle plain_oracle(const Matrix& a, std::size_t* calls = nullptr) {
  return [a, calls](const Matrix& x) {
    if (calls) ++*calls;
    return matmul(x, a);
  };
}

TEST(ExtractPlain, ReadsRowsOfSmallMatrix) {
  const Matrix a{{1, 2}, {3, 4}};
  const auto res = extract_plain_linear(plain_oracle(a), 2);
  EXPECT_EQ(res.a, a);
  EXPECT_EQ(res.queries, 2u);
  EXPECT_TRUE(res.consistent);
}

TEST(ExtractPlain, ZeroMatrix) {
  const Matrix a(3, 5);
  const auto res = extract_plain_linear(plain_oracle(a), 3);
  EXPECT_EQ(res.a, a);
  EXPECT_EQ(res.queries, 3u);
}

TEST(ExtractPlain, RandomSquareExactWithCountedQueries) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed);
    const Matrix a = gaussian_matrix(16, 16, 1.0, rng);
    std::size_t calls = 0;
    const auto res = extract_plain_linear(plain_oracle(a, &calls), 16);
    EXPECT_EQ(res.a, a) << "seed " << seed;
    EXPECT_EQ(res.queries, 16u);
    EXPECT_EQ(calls, res.queries + res.verification_queries);
    EXPECT_TRUE(res.consistent);
  }
}

TEST(ExtractPlain, FlagsNondeterministicOracle) {
  auto rng = make_rng(3);
  const Matrix a = gaussian_matrix(4, 4, 1.0, rng);
  auto noisy = [&](const Matrix& x) { return matmul(x, a) + gaussian_matrix(1, 4, 1e-3, rng); };
  const auto res = extract_plain_linear(noisy, 4);
  EXPECT_FALSE(res.consistent);
  EXPECT_NE(res.failure.find("repeated"), std::string::npos);
}

TEST(ExtractPlain, FlagsAffineOracle) {
  const Matrix a{{1, 0}, {0, 1}};
  auto affine = [&](const Matrix& x) { return add_row_broadcast(matmul(x, a), Matrix{{5, 5}}); };
  const auto res = extract_plain_linear(affine, 2);
  EXPECT_FALSE(res.consistent);
}

TEST(ExtractionResiduals, DegenerateLayerIsDeterministic) {
  auto cfg = pll::PllConfig::make(8, 8, 1e6);
  cfg.p_bern = 1.0;
  auto rng = make_rng(5);
  const auto w = pll::pll_init(cfg, rng);
  auto qrng = make_rng(6);
  const Matrix truth = w.effective_a();
  const auto st = extraction_residuals(make_pll_oracle(w, qrng, true), 8, 20, &truth);
  EXPECT_LT(st.residual_variance, 1e-18);
  EXPECT_EQ(st.disagreement_rate, 0.0);
  EXPECT_LT(st.max_abs_error, 1e-6);
}

TEST(ExtractionResiduals, DefaultLayerDisagreesOnRepeats) {
  auto rng = make_rng(7);
  const auto w = pll::pll_init(pll::PllConfig::make(16, 16, 1.0), rng);
  auto qrng = make_rng(8);
  const auto st = extraction_residuals(make_pll_oracle(w, qrng), 16, 1000);
  EXPECT_GT(st.disagreement_rate, 0.99);
  EXPECT_GT(st.residual_variance, 0.0);
  EXPECT_EQ(st.queries, 1000u * 18u);
}

TEST(ExtractionResiduals, VarianceGrowsWithModulus) {
  double prev = 0.0;
  for (double q : {1.0, 2.0, 4.0}) {
    auto rng = make_rng(9);
    const auto w = pll::pll_init(pll::PllConfig::make(8, 8, q), rng);
    auto qrng = make_rng(10);
    const auto st = extraction_residuals(make_pll_oracle(w, qrng), 8, 200);
    EXPECT_GT(st.residual_variance, prev) << "q = " << q;
    prev = st.residual_variance;
  }
}

TEST(ExtractionResiduals, RejectsEmptyRuns) {
  auto oracle = plain_oracle(Matrix(2, 2));
  EXPECT_THROW(extraction_residuals(oracle, 0, 1), DimensionError);
  EXPECT_THROW(extraction_residuals(oracle, 2, 0), DimensionError);
}

LweParams clwe_params(std::size_t m, std::size_t n, double beta) {
  LweParams p;
  p.t = 1000;
  p.m = m;
  p.n = n;
  p.gamma = 2.0 * std::sqrt(static_cast<double>(m));
  p.beta = beta;
  return p;
}

TEST(ClweSample, NoiselessMatchesDefinition) {
  auto rng = make_rng(11);
  auto p = clwe_params(8, 6, 0.0);
  p.t = 5;
  const auto set = clwe_sample(p, SampleTag::kClwe, rng);
  const Matrix sa = matmul(set.s, set.a);
  for (std::size_t i = 0; i < p.t; ++i)
    for (std::size_t j = 0; j < p.n; ++j) EXPECT_EQ(set.b(i, j), pll::centered_mod(p.gamma * sa(0, j), 1.0));
  EXPECT_EQ(max_abs(set.e), 0.0);
}

TEST(ClweSample, SecretHasUnitNorm) {
  auto rng = make_rng(12);
  const auto set = clwe_sample(clwe_params(8, 4, 0.01), SampleTag::kClwe, rng);
  double norm2 = 0;
  for (double v : set.s.data()) norm2 += v * v;
  EXPECT_NEAR(std::sqrt(norm2), 1.0, 1e-9);
}

TEST(ClweSample, ResponsesAreCenteredResidues) {
  auto rng = make_rng(13);
  for (auto tag : {SampleTag::kClwe, SampleTag::kUniform}) {
    const auto set = clwe_sample(clwe_params(8, 4, 0.1), tag, rng);
    for (double v : set.b.data()) {
      EXPECT_GE(v, -0.5);
      EXPECT_LT(v, 0.5);
    }
  }
}

TEST(ClweSample, LweIsIntegralModQ) {
  auto rng = make_rng(14);
  LweParams p;
  p.t = 50;
  p.m = 6;
  p.n = 5;
  p.q = 97;
  p.beta = 2.0;
  const auto set = clwe_sample(p, SampleTag::kLwe, rng);
  const Matrix sa = matmul(set.s, set.a);
  for (std::size_t i = 0; i < p.t; ++i)
    for (std::size_t j = 0; j < p.n; ++j) {
      EXPECT_EQ(set.b(i, j), std::floor(set.b(i, j)));
      EXPECT_EQ(pll::centered_mod(set.b(i, j) - sa(0, j) - set.e(i, j), p.q), 0.0);
    }
}

TEST(ClweSample, RejectsBadParams) {
  auto rng = make_rng(15);
  auto p = clwe_params(8, 4, 0.0);
  p.gamma = 1.0;
  EXPECT_THROW(clwe_sample(p, SampleTag::kClwe, rng), ParameterError);
  EXPECT_NO_THROW(clwe_sample(p, SampleTag::kUniform, rng));
  p = clwe_params(8, 4, -1.0);
  EXPECT_THROW(clwe_sample(p, SampleTag::kClwe, rng), ParameterError);
  p = clwe_params(8, 4, 0.0);
  p.q = 2.5;
  EXPECT_THROW(clwe_sample(p, SampleTag::kLwe, rng), ParameterError);
  p.t = 0;
  EXPECT_THROW(clwe_sample(p, SampleTag::kUniform, rng), ParameterError);
}

TEST(ClweSample, LargeNoiseIsIndistinguishable) {
  auto rng = make_rng(16);
  const auto clwe = clwe_sample(clwe_params(8, 8, 2.0), SampleTag::kClwe, rng);
  const auto unif = clwe_sample(clwe_params(8, 8, 2.0), SampleTag::kUniform, rng);
  EXPECT_NEAR(auc(clwe_scores(clwe), clwe_scores(unif)), 0.5, 0.05);
}

TEST(ClweSample, SmallNoiseIsDistinguishable) {
  auto rng = make_rng(17);
  const auto clwe = clwe_sample(clwe_params(8, 8, 0.05), SampleTag::kClwe, rng);
  const auto unif = clwe_sample(clwe_params(8, 8, 0.05), SampleTag::kUniform, rng);
  EXPECT_GT(auc(clwe_scores(clwe), clwe_scores(unif)), 0.99);
}

TEST(Auc, HandlesTiesAndSeparation) {
  EXPECT_DOUBLE_EQ(auc({2, 3}, {0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc({0, 1}, {2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(auc({1}, {1}), 0.5);
  EXPECT_THROW(auc({}, {1}), DimensionError);
}

TEST(Alg1Convert, ScalarSubstitution) {
  LweSampleSet set;
  set.a = Matrix{{0.5}};
  set.b = Matrix{{0.3}};
  const std::vector<SolveMatrixSample> out = [&] {
    auto rng = make_rng(0);
    return alg1_convert(set, 2.0, rng);
  }();
  ASSERT_EQ(out.size(), 1u);
  // Same conversion with x pinned to 1: 0.6 + 1.0 = 1.6, centered -0.4.
  const double raw = 2.0 * 0.3 + 2.0 * 1.0 * 0.5;
  EXPECT_DOUBLE_EQ(raw, 1.6);
  EXPECT_NEAR(pll::centered_mod(raw, 2.0), -0.4, 1e-15);
  const double expect = pll::centered_mod(0.6 + 2.0 * out[0].x(0, 0) * 0.5, 2.0);
  EXPECT_DOUBLE_EQ(out[0].b_prime(0, 0), expect);
}

TEST(Alg1Convert, NoiselessClweGivesSolveMatrixSamples) {
  const double q = 4.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto rng = make_rng(seed);
    auto p = clwe_params(8, 6, 0.0);
    p.t = 10;
    const auto set = clwe_sample(p, SampleTag::kClwe, rng);
    const auto out = alg1_convert(set, q, rng);
    ASSERT_EQ(out.size(), p.t);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_LT(solve_matrix_residual(set, i, out[i], q), 1e-9);
  }
}

TEST(Alg1Convert, NoisyClweKeepsScaledError) {
  const double q = 3.0;
  auto rng = make_rng(21);
  auto p = clwe_params(8, 6, 0.01);
  p.t = 50;
  const auto set = clwe_sample(p, SampleTag::kClwe, rng);
  const auto out = alg1_convert(set, q, rng);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_LT(solve_matrix_residual(set, i, out[i], q), 1e-9);
}

TEST(Alg1Convert, UniformInputStaysUniform) {
  const double q = 5.0;
  auto rng = make_rng(22);
  const auto set = clwe_sample(clwe_params(8, 10, 0.0), SampleTag::kUniform, rng);
  const auto out = alg1_convert(set, q, rng);
  double sum = 0, sq = 0;
  std::size_t count = 0;
  for (const auto& smp : out)
    for (double v : smp.b_prime.data()) {
      EXPECT_GE(v, -q / 2);
      EXPECT_LT(v, q / 2);
      sum += v;
      sq += v * v;
      ++count;
    }
  const double mean = sum / static_cast<double>(count);
  const double var = sq / static_cast<double>(count) - mean * mean;
  // Uniform on [-q/2, q/2): mean 0, variance q^2 / 12; 1e4 draws.
  EXPECT_NEAR(mean, 0.0, 4.0 * q / std::sqrt(12.0 * static_cast<double>(count)));
  EXPECT_NEAR(var, q * q / 12.0, 0.05 * q * q / 12.0);
}

TEST(Alg1Convert, RejectsBadModulus) {
  auto rng = make_rng(23);
  const auto set = clwe_sample(clwe_params(4, 4, 0.0), SampleTag::kClwe, rng);
  EXPECT_THROW(alg1_convert(set, 0.0, rng), ParameterError);
}

}  // namespace
}  // namespace privlora::attack
