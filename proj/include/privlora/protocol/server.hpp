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

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "privlora/ckks/serialize.hpp"
#include "privlora/helinalg/kernel.hpp"
#include "privlora/protocol/messages.hpp"
#include "privlora/protocol/transport.hpp"
#include "privlora/toy/checkpoint.hpp"

namespace privlora::protocol {

/// Randomness the server used for one call, exported for tests that replay
/// the same round in plaintext. `round` is empty for plain adapters.
struct RoundRecord {
  std::uint64_t session_id = 0;
  std::uint64_t t = 0;
  toy::SplitPoint site;
  std::optional<pll::PllRound> round;
};

struct ServerConfig {
  ckks::CkksParams params = ckks::CkksParams::defaults();
  toy::ToyModel model;     // base weights and private adapters
  std::uint64_t seed = 0;  // 0 draws from the OS
  std::size_t kernel_threads = 1;
  /// Bound of the uniform junk in non-result slots; negative picks
  /// 2 max|Q_t| (at least 1) per call.
  double junk_bound = -1.0;
  std::size_t max_frame = max_frame_from_env();
  long idle_timeout_ms = 10 * 60 * 1000;
  std::function<void(const RoundRecord&)> on_round;
};

struct ServerStats {
  std::size_t sessions = 0;
  std::size_t key_cache_hits = 0;
  std::size_t lora_calls = 0;
  std::size_t errors_sent = 0;
};

/// Thread-per-connection LoRA server. Holds evaluation keys only; no secret
/// key type appears in its state.
class LoraServer {
 public:
  explicit LoraServer(ServerConfig cfg) : cfg_(std::move(cfg)), ctx_(ckks::CkksContext::create(cfg_.params)) {
    if (ctx_->max_level() < ckks::kRequiredDepth) throw ParameterError("server parameters lack depth 3");
    std::vector<helinalg::PackLayout> layouts;
    for (const auto& p : cfg_.model.sites()) {
      const auto& a = cfg_.model.adapter(p);
      layouts.push_back(helinalg::PackLayout::make(ctx_->slots(), 1, cfg_.model.config.d_model, a.r,
                                                   cfg_.model.config.d_model));
    }
    if (layouts.empty()) throw ParameterError("model has no adapter sites to serve");
    steps_ = helinalg::rotation_steps_for(layouts);
    params_bytes_ = ckks::serialize(cfg_.params);
    model_bytes_ = toy::serialize_model(toy::client_view(cfg_.model));
    master_ = cfg_.seed != 0 ? make_rng(cfg_.seed) : make_rng_from_entropy();
  }

  ~LoraServer() { stop(); }
  LoraServer(const LoraServer&) = delete;
  LoraServer& operator=(const LoraServer&) = delete;

  /// Binds and starts accepting in the background; returns the bound port.
  std::uint16_t start(const std::string& host = "127.0.0.1", std::uint16_t port = 0) {
    listener_ = std::make_unique<Listener>(host, port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    return listener_->port();
  }

  std::uint16_t port() const { return listener_ ? listener_->port() : 0; }

  void stop() {
    if (!running_.exchange(false)) return;
    listener_->shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard lk(mu_);
      for (auto* s : live_) s->shutdown();
      workers.swap(workers_);
    }
    for (auto& w : workers) w.join();
  }

  const ckks::CkksContext& context() const { return *ctx_; }
  const std::vector<long long>& rotation_steps() const { return steps_; }

  ServerStats stats() const {
    std::lock_guard lk(mu_);
    return stats_;
  }

  std::size_t cached_keys() const {
    std::lock_guard lk(mu_);
    return key_cache_.size();
  }

 private:
  enum class Phase { kHello, kPubKey, kRotKeys, kReady };

  struct Session {
    std::uint64_t id = 0;
    Rng rng;
    Phase phase = Phase::kHello;
    Digest hello_fp{};
    bool cache_hit = false;
    std::optional<ckks::PublicKey> pk;
    std::shared_ptr<const ckks::EvaluationKeys> keys;
    std::uint64_t last_t = 0;
    std::optional<LoraRequest> pending;  // chunks received so far
    std::uint32_t chunks_seen = 0;
  };

  /// Failure reported to the peer; `fatal` closes the connection after.
  struct Reject {
    ErrorCode code;
    std::string message;
    bool fatal;
  };

  void accept_loop() {
    while (running_) {
      Socket s;
      try {
        s = listener_->accept();
      } catch (const TransportError&) {
        return;
      }
      std::lock_guard lk(mu_);
      if (!running_) return;
      workers_.emplace_back([this, sock = std::move(s)]() mutable { run_connection(std::move(sock)); });
    }
  }

  void run_connection(Socket sock) {
    sock.set_timeout_ms(cfg_.idle_timeout_ms);
    FrameChannel ch(std::move(sock), cfg_.max_frame);
    {
      std::lock_guard lk(mu_);
      live_.push_back(&ch.socket());
      ++stats_.sessions;
    }
    Session sess;
    {
      std::lock_guard lk(mu_);
      sess.id = next_session_++;
      sess.rng = Rng(master_());
    }
    try {
      serve(ch, sess);
    } catch (const FramingError& e) {
      send_error(ch, {ErrorCode::kFraming, e.what(), true});
    } catch (const TransportError&) {
    } catch (const std::exception& e) {
      send_error(ch, {ErrorCode::kInternal, e.what(), true});
    }
    std::lock_guard lk(mu_);
    std::erase(live_, &ch.socket());
  }

  void send_error(FrameChannel& ch, const Reject& r) {
    try {
      ch.send(MsgType::kError, encode(ErrorMsg{r.code, r.message}));
      std::lock_guard lk(mu_);
      ++stats_.errors_sent;
    } catch (const Error&) {
    }
  }

  void serve(FrameChannel& ch, Session& sess) {
    for (;;) {
      Frame f = ch.recv();
      if (f.type == MsgType::kBye) return;
      try {
        handle(ch, sess, f);
      } catch (const Reject& r) {
        send_error(ch, r);
        if (r.fatal) return;
      }
    }
  }

  static Reject ordering(const Frame& f, const char* expected) {
    return {ErrorCode::kOrdering, std::string("unexpected ") + msg_name(f.type) + ", expected " + expected, true};
  }

  void handle(FrameChannel& ch, Session& sess, const Frame& f) {
    switch (sess.phase) {
      case Phase::kHello: {
        if (f.type != MsgType::kHello) throw ordering(f, "HELLO");
        Hello h;
        try {
          h = decode_hello(f.payload);
        } catch (const FormatError& e) {
          throw Reject{ErrorCode::kMalformed, e.what(), true};
        }
        if (h.version != kProtocolVersion)
          throw Reject{ErrorCode::kRejected, "protocol version " + std::to_string(h.version) + " not supported", true};
        sess.hello_fp = h.key_fp;
        {
          std::lock_guard lk(mu_);
          sess.cache_hit = key_cache_.contains(h.key_fp);
        }
        ParamsMsg pm{sess.id, params_bytes_, sess.cache_hit, steps_};
        ch.send(MsgType::kParams, encode(pm));
        ch.send(MsgType::kModel, model_bytes_);
        sess.phase = Phase::kPubKey;
        return;
      }
      case Phase::kPubKey: {
        if (f.type != MsgType::kPubKey) throw ordering(f, "PUBKEY");
        try {
          sess.pk = ckks::deserialize_public_key(*ctx_, f.payload);
        } catch (const Error& e) {
          throw Reject{ErrorCode::kKeys, std::string("public key: ") + e.what(), true};
        }
        if (!sess.cache_hit) {
          sess.phase = Phase::kRotKeys;
          return;
        }
        std::shared_ptr<const ckks::EvaluationKeys> cached;
        {
          std::lock_guard lk(mu_);
          cached = key_cache_.at(sess.hello_fp);
          ++stats_.key_cache_hits;
        }
        auto keys = std::make_shared<ckks::EvaluationKeys>(ckks::assemble_eval_keys(*ctx_, *sess.pk, cached->rotations));
        if (keys->fingerprint != sess.hello_fp)
          throw Reject{ErrorCode::kKeys, "public key does not match the cached key fingerprint", true};
        sess.keys = std::move(keys);
        sess.phase = Phase::kReady;
        return;
      }
      case Phase::kRotKeys: {
        if (f.type != MsgType::kRotKeys) throw ordering(f, "ROTKEYS");
        ckks::RotationKeys rot;
        try {
          rot = ckks::deserialize_rotation_keys(*ctx_, f.payload);
        } catch (const Error& e) {
          throw Reject{ErrorCode::kKeys, std::string("rotation keys: ") + e.what(), true};
        }
        auto keys = std::make_shared<ckks::EvaluationKeys>(ckks::assemble_eval_keys(*ctx_, *sess.pk, std::move(rot)));
        for (long long s : steps_)
          if (keys->find(*ctx_, s) == nullptr)
            throw Reject{ErrorCode::kKeys, "rotation key for step " + std::to_string(s) + " missing", true};
        {
          std::lock_guard lk(mu_);
          key_cache_[keys->fingerprint] = keys;
        }
        sess.keys = std::move(keys);
        sess.phase = Phase::kReady;
        return;
      }
      case Phase::kReady: {
        if (f.type != MsgType::kLoraReq) throw ordering(f, "LORA_REQ or BYE");
        handle_request(ch, sess, f);
        return;
      }
    }
  }

  void handle_request(FrameChannel& ch, Session& sess, const Frame& f) {
    LoraRequest req;
    try {
      req = decode_request(f.payload, ctx_->slots());
    } catch (const FormatError& e) {
      sess.pending.reset();
      throw Reject{ErrorCode::kMalformed, e.what(), false};
    }
    if (req.session_id != sess.id) {
      sess.pending.reset();
      throw Reject{ErrorCode::kRejected, "request for another session", false};
    }
    if (sess.pending) {
      LoraRequest& p = *sess.pending;
      if (req.t != p.t || req.chunk_count != p.chunk_count || req.chunk_index != sess.chunks_seen ||
          !(req.layout == p.layout) || req.site != p.site) {
        sess.pending.reset();
        throw Reject{ErrorCode::kRejected, "chunk does not continue the pending request", false};
      }
      for (auto& c : req.ciphertexts) p.ciphertexts.push_back(std::move(c));
    } else {
      if (req.t <= sess.last_t)
        throw Reject{ErrorCode::kRejected, "round counter " + std::to_string(req.t) + " is not increasing", false};
      if (req.chunk_index != 0) throw Reject{ErrorCode::kRejected, "request must start at chunk 0", false};
      sess.pending = std::move(req);
      sess.chunks_seen = 0;
    }
    if (++sess.chunks_seen < sess.pending->chunk_count) return;
    LoraRequest full = std::move(*sess.pending);
    sess.pending.reset();
    sess.last_t = full.t;
    respond(ch, sess, full);
  }

  void respond(FrameChannel& ch, Session& sess, const LoraRequest& req) {
    const auto& model = cfg_.model;
    if (!model.has_adapter(req.site))
      throw Reject{ErrorCode::kRejected, "no adapter at " + toy::to_string(req.site), false};
    const toy::LoraAdapter& a = model.adapter(req.site);
    const std::size_t d_model = model.config.d_model;
    helinalg::PackLayout want;
    try {
      want = helinalg::PackLayout::make(ctx_->slots(), req.layout.d, d_model, a.r, d_model);
    } catch (const Error& e) {
      throw Reject{ErrorCode::kRejected, e.what(), false};
    }
    if (!(want == req.layout)) throw Reject{ErrorCode::kRejected, "layout does not match the adapter", false};
    if (req.ciphertexts.size() != want.ct_count)
      throw Reject{ErrorCode::kRejected, "expected " + std::to_string(want.ct_count) + " ciphertexts", false};

    helinalg::PackedMatrix x;
    x.layout = want;
    try {
      for (const auto& b : req.ciphertexts) x.ciphertexts.push_back(ckks::deserialize_ciphertext(*ctx_, b));
    } catch (const Error& e) {
      throw Reject{ErrorCode::kMalformed, std::string("ciphertext: ") + e.what(), false};
    }
    x.level = ctx_->max_level();
    x.scale = ctx_->params().default_scale();
    for (const auto& ct : x.ciphertexts) {
      if (ct.level != x.level || !ckks::scales_match(ct.scale, x.scale))
        throw Reject{ErrorCode::kRejected, "ciphertexts must be fresh (top level, default scale)", false};
    }

    RoundRecord rec{sess.id, req.t, req.site, std::nullopt};
    Matrix qt(want.d, d_model);
    if (a.pll) {
      rec.round = pll::sample_round(*a.pll, want.d, sess.rng);
      qt = rec.round->qt;
    }
    if (cfg_.on_round) cfg_.on_round(rec);

    const double junk = cfg_.junk_bound >= 0 ? cfg_.junk_bound : std::max(1.0, 2.0 * max_abs(qt));
    helinalg::PackedMatrix res;
    try {
      const auto ops = helinalg::build_server_operands(*ctx_, a.server_a1(), a.server_a2(), qt, want, junk, sess.rng);
      res = helinalg::he_lora_apply(*ctx_, x, ops, *sess.keys, {cfg_.kernel_threads});
    } catch (const Error& e) {
      throw Reject{ErrorCode::kRejected, e.what(), false};
    }
    if (res.level + ckks::kRequiredDepth != x.level)
      throw Reject{ErrorCode::kInternal, "kernel did not consume exactly three levels", false};

    std::vector<Bytes> out;
    for (const auto& ct : res.ciphertexts) out.push_back(ckks::serialize(ct));
    {
      std::lock_guard lk(mu_);
      ++stats_.lora_calls;
    }
    auto groups = chunk_blobs(std::move(out), ciphertext_budget(cfg_.max_frame));
    for (std::uint32_t i = 0; i < groups.size(); ++i) {
      LoraResponse r{sess.id, req.t, i, static_cast<std::uint32_t>(groups.size()), std::move(groups[i])};
      ch.send(MsgType::kLoraResp, encode(r));
    }
  }

  ServerConfig cfg_;
  std::shared_ptr<const ckks::CkksContext> ctx_;
  std::vector<long long> steps_;
  Bytes params_bytes_;
  Bytes model_bytes_;

  mutable std::mutex mu_;
  Rng master_;
  std::uint64_t next_session_ = 1;
  std::map<Digest, std::shared_ptr<const ckks::EvaluationKeys>> key_cache_;
  ServerStats stats_;
  std::vector<Socket*> live_;

  std::unique_ptr<Listener> listener_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::vector<std::thread> workers_;
};

}  // namespace privlora::protocol
