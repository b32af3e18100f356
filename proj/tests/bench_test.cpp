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

#include <sstream>

#include "privlora/bench/bench.hpp"
#include "privlora/protocol/server.hpp"

namespace privlora::bench {
namespace {

TEST(LinearFitTest, RecoversExactLine) {
  const auto f = linear_fit({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(LinearFitTest, KnownNoisyValue) {
  // y = (1, 3, 2, 4): slope 0.8, intercept 0.5, R^2 = 0.64.
  const auto f = linear_fit({1, 2, 3, 4}, {1, 3, 2, 4});
  EXPECT_NEAR(f.slope, 0.8, 1e-12);
  EXPECT_NEAR(f.intercept, 0.5, 1e-12);
  EXPECT_NEAR(f.r2, 0.64, 1e-12);
}

TEST(LinearFitTest, RejectsDegenerateInput) {
  EXPECT_THROW(linear_fit({1}, {1}), DimensionError);
  EXPECT_THROW(linear_fit({1, 2}, {1}), DimensionError);
  EXPECT_THROW(linear_fit({2, 2}, {1, 3}), ParameterError);
  EXPECT_EQ(linear_fit({1, 2}, {5, 5}).r2, 1.0);
}

TEST(ReferenceDataTest, PublishedCurves) {
  EXPECT_EQ(kRefTokenCurve.front().x, 50);
  EXPECT_EQ(kRefTokenCurve.front().y, 315.586);
  EXPECT_EQ(kRefTokenCurve.back().x, 1000);
  EXPECT_EQ(kRefTokenCurve.back().y, 160.6188);
  EXPECT_EQ(kRefRankCurve.front().y, 1.715818);
  EXPECT_EQ(kRefRankCurve.back().x, 48);
  EXPECT_EQ(kRefRankCurve.back().y, 5.6657);
  std::map<std::size_t, double> tok, rank;
  for (const auto& p : kRefTokenCurve) tok[static_cast<std::size_t>(p.x)] = p.y;
  for (const auto& p : kRefRankCurve) rank[static_cast<std::size_t>(p.x)] = p.y;
  EXPECT_TRUE(strictly_decreasing(tok));
  EXPECT_TRUE(strictly_increasing(rank));
  std::vector<double> rx, ry;
  for (const auto& p : kRefRankCurve) {
    rx.push_back(p.x);
    ry.push_back(p.y);
  }
  EXPECT_GE(linear_fit(rx, ry).r2, 0.99);
  EXPECT_EQ(kRefSchemes.size(), 8u);
  EXPECT_STREQ(kRefSchemes.back().time, "1.61s");
  EXPECT_STREQ(kRefSchemes[6].scheme, "PUMA");
  EXPECT_STREQ(kRefSchemes[6].time, "200s");
}

TEST(CurveTest, MonotoneChecks) {
  EXPECT_TRUE(strictly_decreasing({{1, 3.0}, {2, 2.0}, {5, 1.0}}));
  EXPECT_FALSE(strictly_decreasing({{1, 3.0}, {2, 3.0}}));
  EXPECT_TRUE(strictly_decreasing({{1, 3.0}}));
  EXPECT_FALSE(strictly_increasing({{1, 1.0}, {2, 3.0}, {3, 2.0}}));
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), DimensionError);
}

TEST(CsvTest, RoundTripKeepsEverySample) {
  std::vector<Sample> in{{"a", 50, 8, 0, 120.5, 2.41, false}, {"a", 50, 8, 1, 130.25, 2.605, true}};
  std::stringstream ss;
  write_csv(ss, in);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "run_id,tokens,rank,trial,wall_ms,per_token_ms,parallel_mode");
  const auto out = read_csv(ss);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].run_id, "a");
  EXPECT_EQ(out[1].trial, 1u);
  EXPECT_EQ(out[1].wall_ms, 130.25);
  EXPECT_TRUE(out[1].parallel_mode);
  const auto med = median_per_token(out, false);
  EXPECT_NEAR(med.at(50), 2.5075, 1e-12);
}

TEST(CsvTest, RejectsMalformedInput) {
  std::stringstream empty;
  EXPECT_THROW(read_csv(empty), FormatError);
  std::stringstream hdr("tokens,rank\n1,2\n");
  EXPECT_THROW(read_csv(hdr), FormatError);
  std::stringstream arity("run_id,tokens,rank,trial,wall_ms,per_token_ms,parallel_mode\na,1,2\n");
  EXPECT_THROW(read_csv(arity), FormatError);
  std::stringstream num("run_id,tokens,rank,trial,wall_ms,per_token_ms,parallel_mode\na,x,2,0,1,1,0\n");
  EXPECT_THROW(read_csv(num), FormatError);
}

TEST(BenchModelTest, OneAdapterPerRank) {
  auto rng = make_rng(1);
  const auto m = make_bench_model(16, {2, 4, 6}, rng);
  ASSERT_EQ(m.sites().size(), 3u);
  EXPECT_EQ(m.adapter(site_for_rank(m, 4)).r, 4u);
  EXPECT_EQ(m.adapter(site_for_rank(m, 6)).a1.cols(), 6u);
  EXPECT_TRUE(m.adapter(site_for_rank(m, 2)).pll.has_value());
  EXPECT_THROW(site_for_rank(m, 5), ParameterError);
  EXPECT_THROW(make_bench_model(16, {}, rng), ParameterError);
}

TEST(SweepTest, ZeroTrialsNeverConnects) {
  bool touched = false;
  const Connector connect = [&]() -> protocol::LoraClient& {
    touched = true;
    throw TransportError("no server");
  };
  SweepOptions opt;
  opt.trials = 0;
  EXPECT_TRUE(run_token_bench(connect, {50, 100}, 8, opt).samples.empty());
  EXPECT_TRUE(run_rank_bench(connect, {8, 16}, 50, opt).samples.empty());
  EXPECT_FALSE(touched);
  opt.trials = 1;
  EXPECT_THROW(run_token_bench(connect, {50}, 8, opt), TransportError);
}

TEST(SweepTest, LiveSweepsRecordRawSamples) {
  auto rng = make_rng(2);
  protocol::ServerConfig cfg;
  cfg.model = make_bench_model(16, {2, 4}, rng);
  cfg.seed = 3;
  protocol::LoraServer server(std::move(cfg));
  const auto port = server.start();
  std::unique_ptr<protocol::LoraClient> c;
  const Connector connect = [&]() -> protocol::LoraClient& {
    if (!c) {
      protocol::ClientOptions o;
      o.seed = 4;
      c = std::make_unique<protocol::LoraClient>("127.0.0.1", port, o);
    }
    return *c;
  };
  SweepOptions opt;
  opt.trials = 2;
  opt.run_id = "live";
  const auto tok = run_token_bench(connect, {1, 3}, 2, opt);
  ASSERT_EQ(tok.samples.size(), 4u);
  for (const auto& s : tok.samples) {
    EXPECT_EQ(s.run_id, "live");
    EXPECT_EQ(s.rank, 2u);
    EXPECT_GT(s.wall_ms, 0.0);
    EXPECT_DOUBLE_EQ(s.per_token_ms, s.wall_ms / static_cast<double>(s.tokens));
  }
  EXPECT_EQ(tok.samples[3].tokens, 3u);
  EXPECT_EQ(tok.samples[3].trial, 1u);
  const auto rk = run_rank_bench(connect, {2, 4}, 2, opt);
  ASSERT_EQ(rk.samples.size(), 4u);
  EXPECT_EQ(rk.samples[2].rank, 4u);
  // Benchmarks only read: two warm-up plus four timed calls per sweep.
  EXPECT_EQ(server.stats().lora_calls, 12u);
}

}  // namespace
}  // namespace privlora::bench
