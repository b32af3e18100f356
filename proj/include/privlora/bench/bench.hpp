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
#include <array>
#include <chrono>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "privlora/protocol/client.hpp"
#include "privlora/toy/train.hpp"

namespace privlora::bench {

/// A point of a published curve: x is tokens or rank, y is seconds per token
/// as plotted.
struct RefPoint {
  double x;
  double y;
};

/// Published per-token time against token count (rank 8).
inline constexpr std::array<RefPoint, 6> kRefTokenCurve{
    {{50, 315.586}, {100, 231.223}, {200, 188.6815}, {500, 171.5818}, {700, 168.355}, {1000, 160.6188}}};

/// Published per-token time against LoRA rank (500 tokens).
inline constexpr std::array<RefPoint, 4> kRefRankCurve{{{8, 1.715818}, {16, 2.49392}, {24, 3.36596}, {48, 5.6657}}};

/// Published per-token time at 1000 tokens, rank 8.
inline constexpr double kRefSecondsPerToken = 1.61;

struct RefScheme {
  const char* group;  // "small" or "billion+"
  int year;
  const char* scheme;
  const char* model;
  const char* parameters;
  const char* time;  // per token, "-" when not reported
};

inline constexpr std::array<RefScheme, 8> kRefSchemes{{
    {"small", 2022, "THE-X", "Bert-tiny", "<14.5M", "-"},
    {"small", 2022, "Iron", "Bert-Large", "340M", "6000s"},
    {"small", 2023, "BumbleBee", "GPT2-Base", "117M", "204.6s"},
    {"small", 2023, "CipherGPT", "GPT2-Base", "117M", "1500s"},
    {"small", 2023, "PUMA", "GPT2-Base", "117M", "15.5s"},
    {"billion+", 2023, "BumbleBee", "LLaMA-7B", "7B", "832.2s"},
    {"billion+", 2023, "PUMA", "LLaMA-7B", "7B", "200s"},
    {"billion+", 2024, "Ours", "ChatGLM2", "6B", "1.61s"},
}};

inline constexpr std::array<std::string_view, 7> kCsvColumns{"run_id",   "tokens",       "rank",         "trial",
                                                             "wall_ms", "per_token_ms", "parallel_mode"};

/// One timed LoRA call over a batch of `tokens` rows.
struct Sample {
  std::string run_id;
  std::size_t tokens = 0;
  std::size_t rank = 0;
  std::size_t trial = 0;
  double wall_ms = 0;
  double per_token_ms = 0;
  bool parallel_mode = false;
};

struct BenchReport {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<Sample> samples;  // every timed call, unaggregated
};

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

/// Ordinary least squares; r2 is 1 when y has no variance and the fit is exact.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("linear fit needs two or more paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw ParameterError("linear fit needs two distinct x values");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
  }
  f.r2 = syy > 0 ? 1.0 - ss_res / syy : (ss_res == 0 ? 1.0 : 0.0);
  return f;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DimensionError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Median per-token time grouped by token count or by rank.
inline std::map<std::size_t, double> median_per_token(const std::vector<Sample>& samples, bool by_rank) {
  std::map<std::size_t, std::vector<double>> groups;
  for (const auto& s : samples) groups[by_rank ? s.rank : s.tokens].push_back(s.per_token_ms);
  std::map<std::size_t, double> out;
  for (auto& [k, v] : groups) out[k] = median(std::move(v));
  return out;
}

inline bool strictly_decreasing(const std::map<std::size_t, double>& curve) {
  for (auto it = curve.begin(); it != curve.end() && std::next(it) != curve.end(); ++it)
    if (!(std::next(it)->second < it->second)) return false;
  return true;
}

inline bool strictly_increasing(const std::map<std::size_t, double>& curve) {
  for (auto it = curve.begin(); it != curve.end() && std::next(it) != curve.end(); ++it)
    if (!(std::next(it)->second > it->second)) return false;
  return true;
}

inline void write_csv(std::ostream& os, const std::vector<Sample>& samples) {
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) os << (i ? "," : "") << kCsvColumns[i];
  os << '\n';
  for (const auto& s : samples) {
    os << s.run_id << ',' << s.tokens << ',' << s.rank << ',' << s.trial << ',' << s.wall_ms << ',' << s.per_token_ms
       << ',' << (s.parallel_mode ? 1 : 0) << '\n';
  }
}

inline std::vector<Sample> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("bench csv: empty input");
  std::string want;
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) want += std::string(i ? "," : "") + std::string(kCsvColumns[i]);
  if (line != want) throw FormatError("bench csv: unexpected header '" + line + "'");
  std::vector<Sample> out;
  for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != kCsvColumns.size()) throw FormatError("bench csv: line " + std::to_string(lineno) + " has wrong arity");
    try {
      Sample s;
      s.run_id = f[0];
      s.tokens = std::stoull(f[1]);
      s.rank = std::stoull(f[2]);
      s.trial = std::stoull(f[3]);
      s.wall_ms = std::stod(f[4]);
      s.per_token_ms = std::stod(f[5]);
      s.parallel_mode = f[6] == "1";
      out.push_back(std::move(s));
    } catch (const std::logic_error&) {
      throw FormatError("bench csv: bad number on line " + std::to_string(lineno));
    }
  }
  return out;
}

/// Toy model whose layer i carries one PLL-wrapped Q adapter of rank
/// ranks[i], so one server covers a whole rank sweep.
inline toy::ToyModel make_bench_model(std::size_t d_model, const std::vector<std::size_t>& ranks, Rng& rng) {
  if (ranks.empty()) throw ParameterError("rank list must be nonempty");
  toy::ToyModelConfig cfg;
  cfg.d_model = d_model;
  cfg.heads = 4;
  cfg.layers = static_cast<std::uint32_t>(ranks.size());
  cfg.targets = {toy::Target::kQ};
  cfg.rank = ranks.front();
  auto m = toy::make_toy_model(cfg, rng);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (std::uint32_t l = 0; l < ranks.size(); ++l) {
    if (ranks[l] == 0) throw ParameterError("rank must be positive");
    auto& a = m.adapter({l, toy::Target::kQ});
    a.r = ranks[l];
    a.a1 = gaussian_matrix(d_model, a.r, sd, rng);
    a.a2 = gaussian_matrix(a.r, d_model, sd, rng);
  }
  toy::wrap_pll(m, toy::DigitTask{}.dataset(32, rng), 4.0, rng);
  return m;
}

/// Site of the adapter with rank `r` in a bench model.
inline toy::SplitPoint site_for_rank(const toy::ToyModel& m, std::size_t r) {
  for (const auto& p : m.sites())
    if (m.adapter(p).r == r) return p;
  throw ParameterError("no adapter of rank " + std::to_string(r));
}

/// Opens the session on first use, so empty sweeps never touch the server.
using Connector = std::function<protocol::LoraClient&()>;

struct SweepOptions {
  std::size_t trials = 3;
  std::string run_id = "run";
  bool parallel_mode = false;
  std::uint64_t seed = 1;  // input data only
  bool warmup = true;      // one untimed call per sweep point
};

namespace detail {

inline Sample time_call(protocol::LoraClient& c, const toy::SplitPoint& site, std::size_t tokens, std::size_t trial,
                        const SweepOptions& opt, Rng& rng) {
  const Matrix x = gaussian_matrix(tokens, c.model().config.d_model, 1.0, rng);
  const auto t0 = std::chrono::steady_clock::now();
  (void)c.call(site, x);
  const auto t1 = std::chrono::steady_clock::now();
  Sample s;
  s.run_id = opt.run_id;
  s.tokens = tokens;
  s.rank = c.model().adapter(site).r;
  s.trial = trial;
  s.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  s.per_token_ms = s.wall_ms / static_cast<double>(tokens);
  s.parallel_mode = opt.parallel_mode;
  return s;
}

}  // namespace detail

/// Times the full client call (encrypt, send, server kernel, receive,
/// decrypt, demodulate) for each batch size at the adapter of rank `rank`.
inline BenchReport run_token_bench(const Connector& connect, const std::vector<std::size_t>& token_counts,
                                   std::size_t rank, const SweepOptions& opt) {
  BenchReport rep;
  rep.config = {{"sweep", "tokens"}, {"rank", std::to_string(rank)}, {"trials", std::to_string(opt.trials)},
                {"parallel_mode", opt.parallel_mode ? "1" : "0"}, {"seed", std::to_string(opt.seed)}};
  if (opt.trials == 0 || token_counts.empty()) return rep;
  for (auto t : token_counts)
    if (t == 0) throw ParameterError("token counts must be positive");
  auto& c = connect();
  const auto site = site_for_rank(c.model(), rank);
  auto rng = make_rng(opt.seed);
  for (auto t : token_counts) {
    if (opt.warmup) detail::time_call(c, site, t, 0, opt, rng);
    for (std::size_t k = 0; k < opt.trials; ++k) rep.samples.push_back(detail::time_call(c, site, t, k, opt, rng));
  }
  return rep;
}

/// Same pipeline at a fixed batch size across adapters of different rank.
inline BenchReport run_rank_bench(const Connector& connect, const std::vector<std::size_t>& ranks,
                                  std::size_t token_count, const SweepOptions& opt) {
  BenchReport rep;
  rep.config = {{"sweep", "rank"}, {"tokens", std::to_string(token_count)}, {"trials", std::to_string(opt.trials)},
                {"parallel_mode", opt.parallel_mode ? "1" : "0"}, {"seed", std::to_string(opt.seed)}};
  if (opt.trials == 0 || ranks.empty()) return rep;
  if (token_count == 0) throw ParameterError("token count must be positive");
  auto& c = connect();
  auto rng = make_rng(opt.seed);
  for (auto r : ranks) {
    const auto site = site_for_rank(c.model(), r);
    if (opt.warmup) detail::time_call(c, site, token_count, 0, opt, rng);
    for (std::size_t k = 0; k < opt.trials; ++k)
      rep.samples.push_back(detail::time_call(c, site, token_count, k, opt, rng));
  }
  return rep;
}

}  // namespace privlora::bench
