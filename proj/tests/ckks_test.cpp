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
#include <quadmath.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "privlora/ckks.hpp"

namespace {

using namespace privlora;
using namespace privlora::ckks;

constexpr double kEncTol = 1e-6;  // relative to max|v|

std::vector<double> random_values(std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

double max_err(const std::vector<double>& got, const std::vector<double>& want) {
  double m = 0;
  for (std::size_t i = 0; i < want.size(); ++i) m = std::max(m, std::abs(got[i] - want[i]));
  return m;
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Shared default-parameter fixture: key generation at N = 8192 is the slow
// part, so it happens once per suite.
class CkksTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ctx_ = CkksContext::create(CkksParams::defaults());
    Rng rng = make_rng(1234);
    keys_ = new KeyMaterial(keygen(*ctx_, {1, 2, 3, 5, -1, -2, 7, 64}, rng));
  }
  static void TearDownTestSuite() {
    delete keys_;
    keys_ = nullptr;
    ctx_.reset();
  }

  Ciphertext enc(const std::vector<double>& v) {
    return encrypt_values(*ctx_, v, keys_->eval, rng_);
  }
  std::vector<double> dec(const Ciphertext& ct) { return decrypt_values(*ctx_, ct, keys_->secret); }

  static ContextPtr ctx_;
  static KeyMaterial* keys_;
  Rng rng_ = make_rng(99);
};

ContextPtr CkksTest::ctx_;
KeyMaterial* CkksTest::keys_ = nullptr;

// ---------------------------------------------------------------- primitives

TEST(ModArith, GeneratedPrimesAreNttFriendlyAndDistinct) {
  const auto primes = generate_ntt_primes(8192, {60, 40, 40, 40, 60});
  ASSERT_EQ(primes.size(), 5u);
  for (std::size_t i = 0; i < primes.size(); ++i) {
    EXPECT_TRUE(is_prime(primes[i]));
    EXPECT_EQ((primes[i] - 1) % 16384, 0u);
    for (std::size_t j = 0; j < i; ++j) EXPECT_NE(primes[i], primes[j]);
  }
  EXPECT_EQ(std::bit_width(primes[0]), 60);
  EXPECT_EQ(std::bit_width(primes[1]), 40);
}

TEST(ModArith, ReduceRoundedHandlesHugeMagnitudes) {
  const u64 p = generate_ntt_primes(16, {40})[0];
  EXPECT_EQ(reduce_rounded(-1.0, p), p - 1);
  EXPECT_EQ(reduce_rounded(2.4, p), 2u);
  // 2^70 exactly representable: compare against repeated doubling.
  u64 expect = 1;
  for (int i = 0; i < 70; ++i) expect = add_mod(expect, expect, p);
  EXPECT_EQ(reduce_rounded(std::ldexp(1.0, 70), p), expect);
  EXPECT_EQ(reduce_rounded(-std::ldexp(1.0, 70), p), neg_mod(expect, p));
}

TEST(Ntt, RoundTripAndNegacyclicConvolution) {
  const std::size_t n = 64;
  const u64 p = generate_ntt_primes(n, {50})[0];
  NttTables t(n, p);
  Rng rng = make_rng(7);
  std::uniform_int_distribution<u64> dist(0, p - 1);
  std::vector<u64> a(n), b(n);
  for (auto& x : a) x = dist(rng);
  for (auto& x : b) x = dist(rng);

  // Schoolbook negacyclic product as the oracle.
  std::vector<u64> want(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const u64 prod = mul_mod(a[i], b[j], p);
      if (i + j < n) want[i + j] = add_mod(want[i + j], prod, p);
      else want[i + j - n] = sub_mod(want[i + j - n], prod, p);
    }

  auto fa = a, fb = b;
  t.forward(fa);
  t.forward(fb);
  auto back = fa;
  t.inverse(back);
  EXPECT_EQ(back, a);
  for (std::size_t i = 0; i < n; ++i) fa[i] = mul_mod(fa[i], fb[i], p);
  t.inverse(fa);
  EXPECT_EQ(fa, want);
}

TEST(Params, RejectsInvalidSets) {
  auto p = CkksParams::with_bit_sizes(1024, {50, 40, 40, 40, 50}, 40);
  EXPECT_NO_THROW(p.validate());

  auto bad_n = p;
  bad_n.ring_degree = 1000;
  EXPECT_THROW(bad_n.validate(), ParameterError);

  auto bad_prime = p;
  bad_prime.modulus_chain[1] = 1000003;  // prime, but not 1 mod 2048
  EXPECT_THROW(bad_prime.validate(), ParameterError);

  auto composite = p;
  composite.modulus_chain[1] = 2048 * 3 + 1 + 2048;  // 8193 = 3 * 2731
  EXPECT_THROW(composite.validate(), ParameterError);

  auto too_short = p;
  too_short.modulus_chain.resize(4);
  EXPECT_THROW(too_short.validate(), ParameterError);

  EXPECT_THROW(CkksContext::create(bad_n), ParameterError);
}

// ---------------------------------------------------------------- keygen

TEST_F(CkksTest, KeygenCoversExactlyTheDeclaredSteps) {
  EXPECT_EQ(keys_->eval.rotations.steps(), (std::set<long long>{-2, -1, 1, 2, 3, 5, 7, 64}));
  EXPECT_EQ(ctx_->params().ring_degree, 8192u);
  EXPECT_EQ(ctx_->params().modulus_chain.size(), 5u);
}

TEST(Keygen, EmptyStepSetIsRejected) {
  auto ctx = CkksContext::create(CkksParams::with_bit_sizes(1024, {50, 40, 40, 40, 50}, 40));
  Rng rng = make_rng(1);
  EXPECT_THROW(keygen(*ctx, {}, rng), ParameterError);
}

TEST(Keygen, SameSeedGivesSameFingerprint) {
  auto ctx = CkksContext::create(CkksParams::with_bit_sizes(1024, {50, 40, 40, 40, 50}, 40));
  Rng r1 = make_rng(42), r2 = make_rng(42), r3 = make_rng(43);
  const auto k1 = keygen(*ctx, {1, -1, 4}, r1);
  const auto k2 = keygen(*ctx, {1, -1, 4}, r2);
  const auto k3 = keygen(*ctx, {1, -1, 4}, r3);
  EXPECT_EQ(k1.fingerprint(), k2.fingerprint());
  EXPECT_NE(k1.fingerprint(), k3.fingerprint());
}

// ---------------------------------------------------------------- encoding

TEST_F(CkksTest, EncodeZeroGivesZeroElement) {
  std::vector<double> zeros(ctx_->slots(), 0.0);
  const auto pt = encode(*ctx_, zeros, ctx_->max_level(), ctx_->params().default_scale());
  EXPECT_TRUE(std::all_of(pt.poly.data.begin(), pt.poly.data.end(), [](u64 x) { return x == 0; }));
}

TEST_F(CkksTest, EncodeConstantOnlyTouchesConstantCoefficient) {
  const double scale = ctx_->params().default_scale();
  const auto pt = encode_constant(*ctx_, 0.75, 0, scale);
  RingElement poly = pt.poly;
  from_ntt(*ctx_, poly);
  const auto coeffs = centered_coefficients(*ctx_, poly);
  EXPECT_NEAR(static_cast<double>(coeffs[0]), 0.75 * scale, 1.0);
  for (std::size_t k = 1; k < coeffs.size(); ++k) ASSERT_LE(std::abs(static_cast<double>(coeffs[k])), 1.0) << k;
}

TEST_F(CkksTest, EncodeRejectsTooManyValues) {
  std::vector<double> v(ctx_->slots() + 1, 1.0);
  EXPECT_THROW(encode(*ctx_, v, 0, 1 << 20), CapacityError);
}

// High-precision canonical-embedding oracle: evaluates the encoded integer
// polynomial at zeta^{5^j} (zeta = exp(i pi / N)) in 113-bit floats.
TEST_F(CkksTest, EncodeMatchesQuadPrecisionEmbedding) {
  const std::size_t n = ctx_->n();
  const std::size_t m = 2 * n;
  const double scale = ctx_->params().default_scale();
  const auto v = random_values(ctx_->slots(), 1.0, rng_);
  const auto pt = encode(*ctx_, v, 0, scale);  // level 0: a single prime, trivial centering

  RingElement poly = pt.poly;
  from_ntt(*ctx_, poly);
  const u64 q0 = ctx_->prime(0);
  std::vector<__float128> coeff(n);
  for (std::size_t k = 0; k < n; ++k) {
    const u64 c = poly.limb(0)[k];
    coeff[k] = c > q0 / 2 ? -static_cast<__float128>(q0 - c) : static_cast<__float128>(c);
  }
  std::vector<__float128> cs(m), sn(m);
  for (std::size_t t = 0; t < m; ++t) {
    const __float128 ang = M_PIq * static_cast<__float128>(t) / static_cast<__float128>(n);
    cs[t] = cosq(ang);
    sn[t] = sinq(ang);
  }
  const auto decoded = decode_real(*ctx_, pt);
  double worst_vs_input = 0, worst_vs_decoder = 0;
  u64 g = 1;
  for (std::size_t j = 0; j < ctx_->slots(); ++j, g = (g * 5) % m) {
    if (j % 97 != 0 && j + 1 != ctx_->slots()) continue;  // ~43 slots incl. both ends
    __float128 re = 0;
    for (std::size_t k = 0; k < n; ++k) re += coeff[k] * cs[(k * g) % m];
    const double slot = static_cast<double>(re / static_cast<__float128>(scale));
    worst_vs_input = std::max(worst_vs_input, std::abs(slot - v[j]));
    worst_vs_decoder = std::max(worst_vs_decoder, std::abs(slot - decoded[j]));
  }
  EXPECT_LE(worst_vs_input, kEncTol * max_abs(v));
  EXPECT_LE(worst_vs_decoder, 1e-9);
  EXPECT_LE(max_err(decoded, v), kEncTol * max_abs(v));
}

TEST_F(CkksTest, EncodeDecodeRoundTripAtEveryLevel) {
  for (std::size_t level = 0; level <= ctx_->max_level(); ++level) {
    const auto v = random_values(ctx_->slots(), 1.0, rng_);
    const auto got = decode_real(*ctx_, encode(*ctx_, v, level, ctx_->params().default_scale()));
    EXPECT_LE(max_err(got, v), kEncTol * max_abs(v)) << "level " << level;
  }
}

// ---------------------------------------------------------------- encrypt / decrypt

TEST_F(CkksTest, EncryptZeroDecryptsToZero) {
  const auto got = dec(enc(std::vector<double>(ctx_->slots(), 0.0)));
  EXPECT_LE(max_abs(got), kEncTol);
}

TEST_F(CkksTest, EncryptDecryptRoundTrip) {
  for (int trial = 0; trial < 5; ++trial) {
    const auto v = random_values(ctx_->slots(), 1.0, rng_);
    EXPECT_LE(max_err(dec(enc(v)), v), kEncTol * max_abs(v));
  }
}

TEST_F(CkksTest, EncryptionIsRandomized) {
  const auto v = random_values(16, 1.0, rng_);
  const auto a = enc(v);
  const auto b = enc(v);
  EXPECT_NE(a.c0.data, b.c0.data);
  EXPECT_LE(max_err(dec(a), dec(b)), 2 * kEncTol);
}

TEST_F(CkksTest, WrongKeyOutputIsUncorrelated) {
  Rng other_rng = make_rng(777);
  const auto other = keygen(*ctx_, {1}, other_rng);
  double sum_abs_corr = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    const auto v = random_values(ctx_->slots(), 1.0, rng_);
    const auto got = decrypt_values(*ctx_, enc(v), other.secret);
    const double mv = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    const double mg = std::accumulate(got.begin(), got.end(), 0.0) / got.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      sxy += (v[i] - mv) * (got[i] - mg);
      sxx += (v[i] - mv) * (v[i] - mv);
      syy += (got[i] - mg) * (got[i] - mg);
    }
    sum_abs_corr += std::abs(sxy / std::sqrt(sxx * syy));
  }
  // |corr| of independent 4096-sample vectors averages ~ sqrt(2/(pi*4096)) ~ 0.012.
  EXPECT_LT(sum_abs_corr / trials, 0.05);
}

TEST_F(CkksTest, EncryptRejectsForeignParameters) {
  auto other = CkksContext::create(CkksParams::with_bit_sizes(1024, {50, 40, 40, 40, 50}, 40));
  const auto pt = encode(*other, std::vector<double>{1.0}, 0, 1 << 20);
  EXPECT_THROW(encrypt(*ctx_, pt, keys_->eval, rng_), KeyError);
}

// ---------------------------------------------------------------- add

TEST_F(CkksTest, AddIdentityAndSum) {
  const auto a = random_values(ctx_->slots(), 1.0, rng_);
  const auto b = random_values(ctx_->slots(), 1.0, rng_);
  const auto ca = enc(a);
  EXPECT_LE(max_err(dec(add(*ctx_, ca, enc(std::vector<double>(1, 0.0)))), a), 2 * kEncTol);
  std::vector<double> sum(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
  EXPECT_LE(max_err(dec(add(*ctx_, ca, enc(b))), sum), 2 * kEncTol * max_abs(sum));
  const auto pb = encode(*ctx_, b, ctx_->max_level(), ca.scale);
  EXPECT_LE(max_err(dec(add_plain(*ctx_, ca, pb)), sum), 2 * kEncTol * max_abs(sum));
}

TEST_F(CkksTest, AddRejectsMisalignedOperands) {
  const auto a = enc({1.0, 2.0});
  auto b = a;
  b.scale *= 2;
  EXPECT_THROW(add(*ctx_, a, b), AlignmentError);
  const auto lower = rescale(*ctx_, cmult_plain(*ctx_, a, encode_constant(*ctx_, 1.0, a.level, ctx_->prime(a.level))));
  EXPECT_THROW(add(*ctx_, a, lower), AlignmentError);
  const auto pt = encode(*ctx_, std::vector<double>{1.0}, a.level, a.scale * 4);
  EXPECT_THROW(add_plain(*ctx_, a, pt), AlignmentError);
}

// ---------------------------------------------------------------- cmult / rescale

TEST_F(CkksTest, MultiplyByOnesKeepsValuesAndSquaresScale) {
  const auto v = random_values(ctx_->slots(), 1.0, rng_);
  const auto ct = enc(v);
  const auto ones = encode_constant(*ctx_, 1.0, ct.level, ctx_->params().default_scale());
  const auto prod = cmult_plain(*ctx_, ct, ones);
  EXPECT_DOUBLE_EQ(prod.scale, ct.scale * ones.scale);
  EXPECT_LE(max_err(dec(prod), v), 2 * kEncTol);
}

TEST_F(CkksTest, MultiplyByZerosGivesZero) {
  const auto ct = enc(random_values(ctx_->slots(), 1.0, rng_));
  const auto zeros = encode_constant(*ctx_, 0.0, ct.level, ctx_->params().default_scale());
  EXPECT_LE(max_abs(dec(rescale(*ctx_, cmult_plain(*ctx_, ct, zeros)))), kEncTol);
}

TEST_F(CkksTest, ProductAfterRescaleMatchesPlaintext) {
  const auto a = random_values(ctx_->slots(), 1.0, rng_);
  const auto b = random_values(ctx_->slots(), 1.0, rng_);
  const auto ct = enc(a);
  const auto pb = encode(*ctx_, b, ct.level, ctx_->params().default_scale());
  const auto r = rescale(*ctx_, cmult_plain(*ctx_, ct, pb));
  std::vector<double> want(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) want[i] = a[i] * b[i];
  EXPECT_LE(max_err(dec(r), want) / max_abs(want), 1e-4);
  EXPECT_EQ(r.level, ct.level - 1);
}

TEST_F(CkksTest, RescaleScaleBookkeeping) {
  const auto ct = enc({0.5, -0.25});
  const auto sq = cmult_plain(*ctx_, ct, encode_constant(*ctx_, 1.0, ct.level, std::exp2(40)));
  EXPECT_DOUBLE_EQ(sq.scale, std::exp2(80));
  const auto r = rescale(*ctx_, sq);
  EXPECT_EQ(r.level, ctx_->max_level() - 1);
  EXPECT_NEAR(std::log2(r.scale), 40.0, 1e-3);
  const auto got = dec(r);
  EXPECT_NEAR(got[0], 0.5, 1e-6);
  EXPECT_NEAR(got[1], -0.25, 1e-6);
}

TEST_F(CkksTest, RescaleAtLevelZeroFails) {
  auto ct = enc({1.0});
  for (std::size_t l = ct.level; l > 0; --l) {
    ct = rescale(*ctx_, cmult_plain(*ctx_, ct, encode_constant(*ctx_, 1.0, ct.level, ctx_->prime(ct.level))));
  }
  EXPECT_EQ(ct.level, 0u);
  EXPECT_NEAR(dec(ct)[0], 1.0, 1e-6);
  EXPECT_THROW(rescale(*ctx_, ct), LevelError);
}

TEST_F(CkksTest, CmultRejectsLevelMismatch) {
  const auto ct = enc({1.0});
  const auto pt = encode_constant(*ctx_, 1.0, ct.level - 1, std::exp2(40));
  EXPECT_THROW(cmult_plain(*ctx_, ct, pt), AlignmentError);
}

// ---------------------------------------------------------------- rotate

TEST_F(CkksTest, RotateByZeroIsIdentity) {
  const auto v = random_values(ctx_->slots(), 1.0, rng_);
  const auto ct = enc(v);
  const auto r = rotate(*ctx_, ct, 0, keys_->eval);
  EXPECT_EQ(r.c0.data, ct.c0.data);
}

TEST_F(CkksTest, RotateByOneShiftsLeftCyclically) {
  std::vector<double> v(ctx_->slots(), 0.0);
  v[0] = 1;
  v[1] = 2;
  v[2] = 3;
  v[3] = 4;
  const auto got = dec(rotate(*ctx_, enc(v), 1, keys_->eval));
  std::vector<double> want(ctx_->slots(), 0.0);
  want[0] = 2;
  want[1] = 3;
  want[2] = 4;
  want.back() = 1;
  EXPECT_LE(max_err(got, want), 1e-5);
}

TEST_F(CkksTest, NegativeStepRotatesRight) {
  std::vector<double> v(ctx_->slots(), 0.0);
  v[0] = 1;
  const auto got = dec(rotate(*ctx_, enc(v), -2, keys_->eval));
  EXPECT_NEAR(got[2], 1.0, 1e-5);
  EXPECT_NEAR(got[0], 0.0, 1e-5);
}

TEST_F(CkksTest, RotationsCompose) {
  const auto v = random_values(ctx_->slots(), 1.0, rng_);
  const auto ct = enc(v);
  const std::vector<std::pair<long long, long long>> pairs = {{1, 2}, {2, 5}, {3, -1}, {5, 2}};
  for (auto [a, b] : pairs) {
    const auto two = dec(rotate(*ctx_, rotate(*ctx_, ct, a, keys_->eval), b, keys_->eval));
    const long long s = static_cast<long long>(ctx_->slots());
    std::vector<double> want(v.size());
    for (long long i = 0; i < s; ++i) want[i] = v[((i + a + b) % s + s) % s];
    EXPECT_LE(max_err(two, want), 1e-5) << a << "+" << b;
  }
}

TEST_F(CkksTest, RotateWithoutKeyFails) {
  EXPECT_THROW(rotate(*ctx_, enc({1.0}), 4, keys_->eval), KeyError);
}

TEST_F(CkksTest, RotateAtLowerLevels) {
  const auto v = random_values(ctx_->slots(), 1.0, rng_);
  auto ct = enc(v);
  const long long s = static_cast<long long>(ctx_->slots());
  for (std::size_t l = ct.level; l > 0; --l) {
    ct = rescale(*ctx_, cmult_plain(*ctx_, ct, encode_constant(*ctx_, 1.0, ct.level, ctx_->prime(ct.level))));
    const auto got = dec(rotate(*ctx_, ct, 3, keys_->eval));
    std::vector<double> want(v.size());
    for (long long i = 0; i < s; ++i) want[i] = v[(i + 3) % s];
    EXPECT_LE(max_err(got, want), 1e-5) << "level " << ct.level;
  }
}

// ---------------------------------------------------------------- properties

TEST_F(CkksTest, SlotIndependenceWithOneHotInputs) {
  for (std::size_t hot : {0u, 17u, 4095u}) {
    std::vector<double> v(ctx_->slots(), 0.0);
    v[hot] = 1.0;
    auto w = random_values(ctx_->slots(), 1.0, rng_);
    const auto ct = enc(v);
    const auto pw = encode(*ctx_, w, ct.level, ctx_->prime(ct.level));
    const auto got = dec(add(*ctx_, rescale(*ctx_, cmult_plain(*ctx_, ct, pw)), rescale(*ctx_, cmult_plain(*ctx_, ct, pw))));
    for (std::size_t i = 0; i < got.size(); ++i) {
      const double want = i == hot ? 2 * w[hot] : 0.0;
      ASSERT_NEAR(got[i], want, 1e-5) << "slot " << i;
    }
  }
}

TEST_F(CkksTest, DeterministicOperations) {
  const auto ct = enc(random_values(64, 1.0, rng_));
  const auto pt = encode_constant(*ctx_, 0.5, ct.level, std::exp2(40));
  EXPECT_EQ(rescale(*ctx_, cmult_plain(*ctx_, ct, pt)).c0.data, rescale(*ctx_, cmult_plain(*ctx_, ct, pt)).c0.data);
  EXPECT_EQ(rotate(*ctx_, ct, 1, keys_->eval).c1.data, rotate(*ctx_, ct, 1, keys_->eval).c1.data);
  EXPECT_EQ(encode(*ctx_, std::vector<double>{0.1, 0.2}, 2, 1e10).poly.data,
            encode(*ctx_, std::vector<double>{0.1, 0.2}, 2, 1e10).poly.data);
}

// Random sequences of up to three {add, cmult+rescale, rotate} with values
// up to 2^10, compared to the same sequence on plaintext vectors.
TEST_F(CkksTest, HomomorphismOverRandomOperationSequences) {
  const long long s = static_cast<long long>(ctx_->slots());
  const std::vector<long long> steps = {1, 2, 3, 5, -1, -2, 7, 64};
  std::uniform_int_distribution<int> op_dist(0, 2), len_dist(1, 3);
  std::uniform_int_distribution<std::size_t> step_dist(0, steps.size() - 1);
  for (int trial = 0; trial < 30; ++trial) {
    auto v = random_values(ctx_->slots(), 1024.0, rng_);
    auto ct = enc(v);
    const int len = len_dist(rng_);
    for (int k = 0; k < len; ++k) {
      switch (op_dist(rng_)) {
        case 0: {
          const auto w = random_values(ctx_->slots(), 1024.0, rng_);
          ct = add(*ctx_, ct, encrypt(*ctx_, encode(*ctx_, w, ct.level, ct.scale), keys_->eval, rng_));
          for (std::size_t i = 0; i < v.size(); ++i) v[i] += w[i];
          break;
        }
        case 1: {
          const auto w = random_values(ctx_->slots(), 1.0, rng_);
          ct = rescale(*ctx_, cmult_plain(*ctx_, ct, encode(*ctx_, w, ct.level, ctx_->prime(ct.level))));
          for (std::size_t i = 0; i < v.size(); ++i) v[i] *= w[i];
          break;
        }
        default: {
          const long long st = steps[step_dist(rng_)];
          ct = rotate(*ctx_, ct, st, keys_->eval);
          std::vector<double> r(v.size());
          for (long long i = 0; i < s; ++i) r[i] = v[((i + st) % s + s) % s];
          v = r;
        }
      }
    }
    EXPECT_LE(max_err(dec(ct), v) / max_abs(v), 1e-3) << "trial " << trial;
  }
}

// ---------------------------------------------------------------- serialization

TEST_F(CkksTest, CiphertextSerializationRoundTrip) {
  const auto v = random_values(32, 1.0, rng_);
  const auto ct = rescale(*ctx_, cmult_plain(*ctx_, enc(v), encode_constant(*ctx_, 1.0, 3, std::exp2(40))));
  const Bytes bytes = serialize(ct);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CKL1");
  EXPECT_EQ(bytes[4], static_cast<std::uint8_t>(ObjectTag::kCiphertext));
  EXPECT_EQ(bytes.size(), 4 + 1 + 32 + 4 + 8 + 2 * (ct.level + 1) * ctx_->n() * 8);
  const auto back = deserialize_ciphertext(*ctx_, bytes);
  EXPECT_EQ(back.c0, ct.c0);
  EXPECT_EQ(back.c1, ct.c1);
  EXPECT_EQ(back.level, ct.level);
  EXPECT_TRUE(scales_match(back.scale, ct.scale));
  EXPECT_LE(max_err(dec(back), v), 1e-5);
}

TEST_F(CkksTest, DeserializationRejectsForeignFingerprint) {
  Bytes bytes = serialize(enc({1.0}));
  bytes[5] ^= 0xff;
  EXPECT_THROW(deserialize_ciphertext(*ctx_, bytes), KeyError);
  Bytes bad_magic = serialize(enc({1.0}));
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_ciphertext(*ctx_, bad_magic), FormatError);
  Bytes truncated = serialize(enc({1.0}));
  truncated.resize(truncated.size() - 9);
  EXPECT_THROW(deserialize_ciphertext(*ctx_, truncated), FormatError);
}

TEST_F(CkksTest, KeyAndParamsSerializationRoundTrip) {
  const auto params = deserialize_params(serialize(ctx_->params()));
  EXPECT_EQ(params.fingerprint(), ctx_->fingerprint());

  const auto pk = deserialize_public_key(*ctx_, serialize(keys_->eval.pk, ctx_->fingerprint()));
  const auto rot = deserialize_rotation_keys(
      *ctx_, serialize(keys_->eval.rotations, ctx_->fingerprint(), ctx_->max_level()));
  const auto ev = assemble_eval_keys(*ctx_, pk, rot);
  EXPECT_EQ(ev.fingerprint, keys_->fingerprint());

  const auto sk = deserialize_secret_key(*ctx_, serialize(keys_->secret));
  EXPECT_EQ(sk.s, keys_->secret.s);

  auto other = CkksContext::create(CkksParams::with_bit_sizes(8192, {60, 40, 40, 40, 59}, 40));
  EXPECT_THROW(deserialize_public_key(*other, serialize(keys_->eval.pk, ctx_->fingerprint())), KeyError);
}

}  // namespace
