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

// privlora command-line front end.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "privlora/attack.hpp"
#include "privlora/bench/bench.hpp"
#include "privlora/protocol.hpp"
#include "privlora/toy.hpp"

namespace fs = std::filesystem;
using namespace privlora;

namespace {

constexpr int kUsageExit = 2;

ckks::CkksParams params_for(std::size_t n) { return ckks::CkksParams::with_bit_sizes(n, {60, 40, 40, 40, 60}, 40); }

std::uint64_t seed_or_entropy(std::uint64_t s) { return s != 0 ? s : make_rng_from_entropy()(); }

std::vector<long long> steps_for(const ckks::CkksContext& ctx, std::size_t d_model, const std::vector<std::size_t>& ranks) {
  std::vector<helinalg::PackLayout> layouts;
  for (auto r : ranks) layouts.push_back(helinalg::PackLayout::make(ctx.slots(), 1, d_model, r, d_model));
  return helinalg::rotation_steps_for(layouts);
}

// Key directory layout shared by keygen and infer.
constexpr const char* kParamsFile = "params.ckks";
constexpr const char* kSecretFile = "secret.ckks";
constexpr const char* kPublicFile = "public.ckks";
constexpr const char* kRotationFile = "rotations.ckks";

std::shared_ptr<const ckks::KeyMaterial> load_keys(const fs::path& dir) {
  const auto ctx = ckks::CkksContext::create(ckks::deserialize_params(read_file((dir / kParamsFile).string())));
  auto km = std::make_shared<ckks::KeyMaterial>();
  km->secret = ckks::deserialize_secret_key(*ctx, read_file((dir / kSecretFile).string()));
  km->eval = ckks::assemble_eval_keys(*ctx, ckks::deserialize_public_key(*ctx, read_file((dir / kPublicFile).string())),
                                      ckks::deserialize_rotation_keys(*ctx, read_file((dir / kRotationFile).string())));
  return km;
}

std::vector<std::uint8_t> prompt_tokens(const std::string& prompt) {
  if (prompt.empty()) throw ParameterError("prompt must be nonempty");
  return {prompt.begin(), prompt.end()};
}

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

struct ServeOpts {
  Endpoint at{"127.0.0.1", 7070};
  std::string model;
  std::size_t n = 8192;
  std::size_t d_model = 64;
  std::vector<std::size_t> ranks{8};
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

toy::ToyModel serve_model(const ServeOpts& o) {
  if (!o.model.empty()) return toy::load_model(o.model);
  auto rng = make_rng(seed_or_entropy(o.seed));
  return bench::make_bench_model(o.d_model, o.ranks, rng);
}

int cmd_keygen(std::size_t n, std::size_t d_model, const std::vector<std::size_t>& ranks, const std::string& out,
               std::uint64_t seed) {
  const auto params = params_for(n);
  const auto ctx = ckks::CkksContext::create(params);
  auto rng = make_rng(seed_or_entropy(seed));
  const auto km = ckks::keygen(*ctx, steps_for(*ctx, d_model, ranks), rng);
  fs::create_directories(out);
  const fs::path dir(out);
  write_file((dir / kParamsFile).string(), ckks::serialize(params));
  write_file((dir / kSecretFile).string(), ckks::serialize(km.secret));
  write_file((dir / kPublicFile).string(), ckks::serialize(km.eval.pk, ctx->fingerprint()));
  write_file((dir / kRotationFile).string(), ckks::serialize(km.eval.rotations, ctx->fingerprint(), ctx->max_level()));
  std::cout << "wrote keys to " << dir.string() << " (N=" << n << ", " << km.eval.rotations.keys.size()
            << " rotation keys, fingerprint " << to_hex(km.fingerprint()).substr(0, 16) << ")\n";
  return 0;
}

int cmd_serve(const ServeOpts& o) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  protocol::ServerConfig cfg;
  cfg.params = params_for(o.n);
  cfg.model = serve_model(o);
  cfg.seed = o.seed;
  cfg.kernel_threads = o.threads;
  protocol::LoraServer server(std::move(cfg));
  const auto port = server.start(o.at.host, o.at.port);
  std::cout << "listening on " << o.at.host << ':' << port << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  const auto st = server.stats();
  std::cout << "stopped: " << st.sessions << " sessions, " << st.lora_calls << " calls, " << st.key_cache_hits
            << " key cache hits, " << st.errors_sent << " errors\n";
  return 0;
}

protocol::ClientOptions client_options(const std::string& keys_dir, double rtt_ms, std::uint64_t seed) {
  protocol::ClientOptions o;
  o.seed = seed;
  o.rtt_ms = rtt_ms;
  if (!keys_dir.empty()) o.keys = load_keys(keys_dir);
  return o;
}

int cmd_infer(const Endpoint& at, const std::string& prompt, const std::string& keys_dir, double rtt_ms,
              std::uint64_t seed) {
  const auto tokens = prompt_tokens(prompt);
  protocol::LoraClient c(at.host, at.port, client_options(keys_dir, rtt_ms, seed));
  const auto t0 = std::chrono::steady_clock::now();
  const Matrix logits = c.infer(tokens);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t last = logits.rows() - 1;
  std::vector<std::size_t> order(logits.cols());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + 5, order.end(),
                    [&](std::size_t a, std::size_t b) { return logits(last, a) > logits(last, b); });
  std::cout << "session " << c.session_id() << (c.cache_hit() ? " (key cache hit)" : "") << ", "
            << c.stats().calls << " LoRA calls, " << std::fixed << std::setprecision(1) << ms << " ms\n";
  std::cout << "top next tokens:";
  for (std::size_t i = 0; i < 5; ++i) {
    const auto tok = order[i];
    std::cout << ' ';
    if (tok >= 32 && tok < 127)
      std::cout << '\'' << static_cast<char>(tok) << '\'';
    else
      std::cout << tok;
    std::cout << '=' << std::setprecision(3) << logits(last, tok);
  }
  std::cout << '\n';
  return 0;
}

int cmd_train(bool use_pll, std::size_t steps, std::uint64_t seed, const std::string& out) {
  toy::TrainOptions opt;
  opt.steps = steps;
  const auto run = toy::run_digit_task(use_pll, seed, opt);
  std::cout << (use_pll ? "PLL" : "plain") << " LoRA, " << steps << " steps: loss " << std::fixed
            << std::setprecision(4) << run.first_loss << " -> " << run.last_loss << ", held-out accuracy "
            << std::setprecision(3) << run.accuracy << '\n';
  if (!out.empty()) {
    toy::save_model(out, run.model);
    std::cout << "saved " << out << '\n';
  }
  return 0;
}

struct BenchOpts {
  std::string connect;  // host:port; empty runs an in-process server
  std::vector<std::size_t> tokens{50, 100, 200, 500, 700, 1000};
  std::vector<std::size_t> ranks{8, 16, 24, 48};
  std::size_t rank = 8;
  std::size_t token_count = 500;
  std::size_t trials = 3;
  std::size_t d_model = 64;
  bool parallel = false;
  double rtt_ms = 0;
  std::string run_id = "run";
  std::string out;
  std::uint64_t seed = 1;
};

Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ParameterError("expected host:port, got '" + s + "'");
  Endpoint e;
  e.host = s.substr(0, colon);
  const unsigned long port = std::stoul(s.substr(colon + 1));
  if (port == 0 || port > 65535) throw ParameterError("port out of range in '" + s + "'");
  e.port = static_cast<std::uint16_t>(port);
  return e;
}

int run_bench(const BenchOpts& o, bool rank_sweep) {
  std::unique_ptr<protocol::LoraServer> server;
  std::unique_ptr<protocol::LoraClient> client;
  const std::size_t threads = o.parallel ? std::max(1u, std::thread::hardware_concurrency()) : 1;
  bench::Connector connect = [&]() -> protocol::LoraClient& {
    if (client) return *client;
    Endpoint at;
    if (o.connect.empty()) {
      protocol::ServerConfig cfg;
      auto rng = make_rng(o.seed);
      cfg.model = bench::make_bench_model(o.d_model, rank_sweep ? o.ranks : std::vector<std::size_t>{o.rank}, rng);
      cfg.seed = o.seed + 1;
      cfg.kernel_threads = threads;
      server = std::make_unique<protocol::LoraServer>(std::move(cfg));
      at.port = server->start();
    } else {
      at = parse_endpoint(o.connect);
    }
    protocol::ClientOptions co;
    co.seed = o.seed + 2;
    co.rtt_ms = o.rtt_ms;
    client = std::make_unique<protocol::LoraClient>(at.host, at.port, co);
    return *client;
  };
  bench::SweepOptions so;
  so.trials = o.trials;
  so.run_id = o.run_id;
  so.parallel_mode = o.parallel;
  so.seed = o.seed;
  const auto rep = rank_sweep ? bench::run_rank_bench(connect, o.ranks, o.token_count, so)
                              : bench::run_token_bench(connect, o.tokens, o.rank, so);
  if (o.out.empty()) {
    bench::write_csv(std::cout, rep.samples);
  } else {
    std::ofstream f(o.out);
    if (!f) throw Error("cannot write " + o.out);
    bench::write_csv(f, rep.samples);
    std::cout << "wrote " << rep.samples.size() << " samples to " << o.out << '\n';
  }
  for (const auto& [k, v] : rep.config) std::cerr << k << '=' << v << ' ';
  std::cerr << "kernel_threads=" << threads << " rtt_ms=" << o.rtt_ms << '\n';
  return 0;
}

int cmd_attack(const std::string& mode, std::size_t n, std::size_t trials, double q, std::uint64_t seed) {
  auto rng = make_rng(seed_or_entropy(seed));
  const Matrix w = gaussian_matrix(n, n, 1.0, rng);
  if (mode == "plain") {
    std::size_t calls = 0;
    const attack::Oracle oracle = [&](const Matrix& x) {
      ++calls;
      return matmul(x, w);
    };
    const auto res = attack::extract_plain_linear(oracle, n);
    const double err = max_abs_diff(res.a, w);
    std::cout << "plain linear layer " << n << "x" << n << ": " << res.queries << " extraction queries + "
              << res.verification_queries << " checks, oracle calls " << calls << ", max |A_hat - A| = "
              << std::scientific << std::setprecision(2) << err << ", "
              << (res.consistent && err == 0 ? "exact recovery" : "recovery FAILED") << '\n';
    return res.consistent && err == 0 ? 0 : 1;
  }
  auto cfg = pll::PllConfig::make(n, n, q);
  auto weights = pll::pll_init(cfg, rng);
  weights.a = w;
  const auto oracle = attack::make_pll_oracle(weights, rng);
  const auto st = attack::extraction_residuals(oracle, n, trials, &w);
  std::cout << "PLL layer " << n << "x" << n << " (q=" << q << "), " << st.trials << " trials, " << st.queries
            << " queries: repeat-query disagreement " << std::fixed << std::setprecision(4)
            << st.disagreement_rate << ", residual variance " << std::scientific << std::setprecision(3)
            << st.residual_variance << ", max |A_hat - A| " << st.max_abs_error << '\n';
  return 0;
}

int cmd_report(const std::string& in, const std::string& against) {
  if (against != "paper") throw ParameterError("--against supports only 'paper'");
  std::ifstream f(in);
  if (!f) throw Error("cannot read " + in);
  const auto samples = bench::read_csv(f);
  std::cout << std::fixed;
  // Each run_id is one sweep: several ranks make a rank sweep, otherwise
  // it is a token sweep.
  std::map<std::string, std::vector<bench::Sample>> runs;
  for (const auto& s : samples) runs[s.run_id].push_back(s);
  std::vector<std::pair<std::size_t, std::vector<bench::Sample>>> by_rank, by_tokens;
  for (auto& [id, rows] : runs) {
    std::set<std::size_t> ranks;
    for (const auto& s : rows) ranks.insert(s.rank);
    if (ranks.size() > 1)
      by_tokens.emplace_back(rows.front().tokens, std::move(rows));
    else
      by_rank.emplace_back(rows.front().rank, std::move(rows));
  }
  bool printed = false;
  for (const auto& [rank, rows] : by_rank) {
    const auto curve = bench::median_per_token(rows, false);
    if (curve.size() < 2) continue;
    printed = true;
    std::cout << "token sweep " << rows.front().run_id << ", rank " << rank
              << " (shape = value / value at first point; paper values as plotted)\n";
    std::cout << "  tokens  measured_ms/token  measured_shape  paper_plotted  paper_shape\n";
    const double m0 = curve.begin()->second;
    for (const auto& [t, v] : curve) {
      std::cout << "  " << std::setw(6) << t << "  " << std::setw(17) << std::setprecision(3) << v << "  "
                << std::setw(14) << std::setprecision(3) << v / m0;
      const auto ref = std::find_if(bench::kRefTokenCurve.begin(), bench::kRefTokenCurve.end(),
                                    [&](const auto& p) { return p.x == static_cast<double>(t); });
      if (ref != bench::kRefTokenCurve.end())
        std::cout << "  " << std::setw(13) << ref->y << "  " << std::setw(11) << ref->y / bench::kRefTokenCurve[0].y;
      std::cout << '\n';
    }
    const double last = std::prev(curve.end())->second;
    std::cout << "  amortization (last / first): measured " << std::setprecision(3) << last / m0 << ", paper "
              << bench::kRefTokenCurve.back().y / bench::kRefTokenCurve.front().y << "; strictly decreasing: "
              << (bench::strictly_decreasing(curve) ? "yes" : "no") << '\n';
  }
  for (const auto& [tokens, rows] : by_tokens) {
    const auto curve = bench::median_per_token(rows, true);
    if (curve.size() < 2) continue;
    printed = true;
    std::vector<double> xs, ys, rx, ry;
    for (const auto& [r, v] : curve) {
      xs.push_back(static_cast<double>(r));
      ys.push_back(v);
    }
    for (const auto& p : bench::kRefRankCurve) {
      rx.push_back(p.x);
      ry.push_back(p.y);
    }
    std::cout << "rank sweep " << rows.front().run_id << ", " << tokens << " tokens\n  rank  measured_ms/token  paper_plotted\n";
    for (const auto& [r, v] : curve) {
      std::cout << "  " << std::setw(4) << r << "  " << std::setw(17) << std::setprecision(3) << v;
      const auto ref = std::find_if(bench::kRefRankCurve.begin(), bench::kRefRankCurve.end(),
                                    [&](const auto& p) { return p.x == static_cast<double>(r); });
      if (ref != bench::kRefRankCurve.end()) std::cout << "  " << std::setw(13) << ref->y;
      std::cout << '\n';
    }
    std::cout << "  linear fit R^2: measured " << std::setprecision(4) << bench::linear_fit(xs, ys).r2 << ", paper "
              << bench::linear_fit(rx, ry).r2 << "; monotone: " << (bench::strictly_increasing(curve) ? "yes" : "no")
              << '\n';
  }
  if (!printed) std::cout << "no sweep with two or more points in " << in << '\n';
  std::cout << "paper-reported schemes (reference only, not measured)\n";
  std::cout << "  group     year  scheme     model       params  time/token\n";
  for (const auto& r : bench::kRefSchemes) {
    std::cout << "  " << std::left << std::setw(8) << r.group << "  " << r.year << "  " << std::setw(9) << r.scheme
              << "  " << std::setw(10) << r.model << "  " << std::setw(6) << r.parameters << "  " << r.time
              << std::right << '\n';
  }
  return 0;
}

template <typename T>
CLI::Option* list_option(CLI::App* app, const std::string& name, std::vector<T>& v, const std::string& help) {
  return app->add_option(name, v, help)->delimiter(',')->expected(1, -1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privlora: encrypted LoRA split inference toolkit"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  std::size_t kg_n = 8192, kg_d = 64;
  std::vector<std::size_t> kg_ranks{8};
  std::string kg_out;
  std::uint64_t kg_seed = 0;
  auto* keygen = app.add_subcommand("keygen", "Generate and write a CKKS key set");
  keygen->add_option("--n", kg_n, "Ring degree")->check(CLI::IsMember({1024, 2048, 4096, 8192, 16384}));
  keygen->add_option("--d-model", kg_d, "Model width the rotation keys cover")->check(CLI::PositiveNumber);
  list_option(keygen, "--ranks", kg_ranks, "Adapter ranks the rotation keys cover");
  keygen->add_option("--out", kg_out, "Output directory")->required();
  keygen->add_option("--seed", kg_seed, "RNG seed (0 draws from the OS)");

  ServeOpts sv;
  auto* serve = app.add_subcommand("serve", "Run the LoRA server until SIGINT or SIGTERM");
  serve->add_option("--host", sv.at.host, "Bind address");
  serve->add_option("--port", sv.at.port, "Port (0 picks a free one)");
  serve->add_option("--model", sv.model, "Toy model checkpoint (default: random bench model)");
  serve->add_option("--n", sv.n, "Ring degree")->check(CLI::IsMember({1024, 2048, 4096, 8192, 16384}));
  serve->add_option("--d-model", sv.d_model, "Bench model width")->check(CLI::PositiveNumber);
  list_option(serve, "--ranks", sv.ranks, "Bench model adapter ranks, one layer each");
  serve->add_option("--threads", sv.threads, "Kernel threads per call")->check(CLI::PositiveNumber);
  serve->add_option("--seed", sv.seed, "RNG seed (0 draws from the OS)");

  Endpoint inf_at{"127.0.0.1", 7070};
  std::string inf_prompt, inf_keys;
  double inf_rtt = 0;
  std::uint64_t inf_seed = 0;
  auto* infer = app.add_subcommand("infer", "Run one encrypted forward pass against a server");
  infer->add_option("--host", inf_at.host, "Server address");
  infer->add_option("--port", inf_at.port, "Server port");
  infer->add_option("--prompt", inf_prompt, "Prompt text, one byte per token")->required();
  infer->add_option("--keys", inf_keys, "Key directory from keygen (default: fresh keys)");
  infer->add_option("--rtt-ms", inf_rtt, "Emulated round trip per LoRA call")->check(CLI::NonNegativeNumber);
  infer->add_option("--seed", inf_seed, "RNG seed (0 draws from the OS)");

  bool tr_pll = false;
  std::size_t tr_steps = 300;
  std::uint64_t tr_seed = 1;
  std::string tr_out;
  auto* train = app.add_subcommand("train-toy", "Train toy LoRA adapters on the digit task");
  train->add_flag("--pll", tr_pll, "Wrap adapters as private linear layers first");
  train->add_option("--steps", tr_steps, "Optimizer steps");
  train->add_option("--seed", tr_seed, "RNG seed");
  train->add_option("--out", tr_out, "Write the trained checkpoint here");

  BenchOpts bt, br;
  auto bench_common = [](CLI::App* c, BenchOpts& o) {
    c->add_option("--connect", o.connect, "host:port of a running server (default: in-process server)");
    c->add_option("--trials", o.trials, "Timed calls per point");
    c->add_option("--d-model", o.d_model, "In-process model width")->check(CLI::PositiveNumber);
    c->add_flag("--parallel", o.parallel, "Parallel-chunk kernel on the in-process server");
    c->add_option("--rtt-ms", o.rtt_ms, "Emulated round trip per call")->check(CLI::NonNegativeNumber);
    c->add_option("--run-id", o.run_id, "run_id column value");
    c->add_option("--out", o.out, "CSV output path (default: stdout)");
    c->add_option("--seed", o.seed, "Seed for the model and inputs")->check(CLI::PositiveNumber);
  };
  auto* btok = app.add_subcommand("bench-tokens", "Per-token time against batch size");
  bench_common(btok, bt);
  list_option(btok, "--tokens", bt.tokens, "Token counts");
  btok->add_option("--rank", bt.rank, "Adapter rank")->check(CLI::PositiveNumber);
  auto* brank = app.add_subcommand("bench-rank", "Per-token time against adapter rank");
  bench_common(brank, br);
  list_option(brank, "--ranks", br.ranks, "Ranks");
  brank->add_option("--tokens", br.token_count, "Tokens per call")->check(CLI::PositiveNumber);

  std::string at_mode = "plain";
  std::size_t at_n = 16, at_trials = 1000;
  double at_q = 1.0;
  std::uint64_t at_seed = 1;
  auto* atk = app.add_subcommand("attack", "Query-based extraction against a plain or PLL layer");
  atk->add_option("--mode", at_mode, "plain or pll")->check(CLI::IsMember({"plain", "pll"}));
  atk->add_option("--n", at_n, "Layer width")->check(CLI::PositiveNumber);
  atk->add_option("--trials", at_trials, "Repetitions for pll mode")->check(CLI::PositiveNumber);
  atk->add_option("--q", at_q, "PLL modulus")->check(CLI::PositiveNumber);
  atk->add_option("--seed", at_seed, "RNG seed (0 draws from the OS)");

  std::string rp_in, rp_against = "paper";
  auto* report = app.add_subcommand("report", "Compare bench CSV against the published curves");
  report->add_option("--in", rp_in, "Bench CSV")->required();
  report->add_option("--against", rp_against, "Reference set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kUsageExit;
  }

  try {
    if (*keygen) return cmd_keygen(kg_n, kg_d, kg_ranks, kg_out, kg_seed);
    if (*serve) return cmd_serve(sv);
    if (*infer) return cmd_infer(inf_at, inf_prompt, inf_keys, inf_rtt, inf_seed);
    if (*train) return cmd_train(tr_pll, tr_steps, tr_seed, tr_out);
    if (*btok) return run_bench(bt, false);
    if (*brank) return run_bench(br, true);
    if (*atk) return cmd_attack(at_mode, at_n, at_trials, at_q, at_seed);
    if (*report) return cmd_report(rp_in, rp_against);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageExit;
}
