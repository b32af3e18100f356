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

#include <chrono>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "privlora/ckks/serialize.hpp"
#include "privlora/helinalg/kernel.hpp"
#include "privlora/protocol/messages.hpp"
#include "privlora/protocol/transport.hpp"
#include "privlora/toy/checkpoint.hpp"
#include "privlora/toy/model.hpp"

namespace privlora::protocol {

struct ClientOptions {
  std::uint64_t seed = 0;  // 0 draws from the OS
  /// Keys from an earlier session; reused when they match the server's
  /// parameters and rotation steps.
  std::shared_ptr<const ckks::KeyMaterial> keys;
  /// Emulated network round trip added to every LoRA call.
  double rtt_ms = 0.0;
  std::size_t max_frame = max_frame_from_env();
  long timeout_ms = 10 * 60 * 1000;
};

struct ClientStats {
  std::size_t calls = 0;
  std::size_t request_frames = 0;
  std::size_t response_frames = 0;
};

/// Throws ProtocolError carrying the peer's message when `f` is an ERROR.
inline void raise_if_error(const Frame& f) {
  if (f.type != MsgType::kError) return;
  const auto e = decode_error(f.payload);
  throw ProtocolError("server error " + std::to_string(static_cast<int>(e.code)) + ": " + e.message);
}

inline Frame expect_frame(FrameChannel& ch, MsgType type) {
  Frame f = ch.recv();
  raise_if_error(f);
  if (f.type != type)
    throw ProtocolError(std::string("expected ") + msg_name(type) + ", got " + msg_name(f.type));
  return f;
}

/// Rejects a response chunk that belongs to another session or round, or
/// arrives out of order.
inline void check_response(const LoraResponse& r, std::uint64_t session_id, std::uint64_t t, std::uint32_t index) {
  if (r.session_id != session_id) throw ProtocolError("response for another session");
  if (r.t != t)
    throw ProtocolError("response round " + std::to_string(r.t) + " does not match request " + std::to_string(t));
  if (r.chunk_index != index) throw ProtocolError("response chunk out of order");
}

/// Client side of a split-inference session. Owns the secret key.
class LoraClient {
 public:
  LoraClient(const std::string& host, std::uint16_t port, ClientOptions opts = {})
      : opts_(std::move(opts)), rng_(opts_.seed != 0 ? make_rng(opts_.seed) : make_rng_from_entropy()) {
    Socket s = connect_tcp(host, port);
    s.set_timeout_ms(opts_.timeout_ms);
    ch_.emplace(std::move(s), opts_.max_frame);
    handshake();
  }

  ~LoraClient() {
    try {
      close();
    } catch (const std::exception&) {
    }
  }
  LoraClient(const LoraClient&) = delete;
  LoraClient& operator=(const LoraClient&) = delete;

  const toy::ToyModel& model() const { return model_; }
  const ckks::CkksContext& context() const { return *ctx_; }
  std::shared_ptr<const ckks::KeyMaterial> keys() const { return keys_; }
  std::uint64_t session_id() const { return session_id_; }
  bool cache_hit() const { return cache_hit_; }
  bool rotkeys_uploaded() const { return rotkeys_uploaded_; }
  const std::vector<long long>& rotation_steps() const { return steps_; }
  const ClientStats& stats() const { return stats_; }
  std::uint64_t last_round() const { return t_; }
  FrameChannel& channel() { return *ch_; }

  helinalg::PackLayout layout_for(const toy::SplitPoint& site, std::size_t d) const {
    const auto& a = adapter(site);
    const std::size_t dm = model_.config.d_model;
    return helinalg::PackLayout::make(ctx_->slots(), d, dm, a.r, dm);
  }

  /// Encrypts `x` into a request for the next round; advances the counter.
  LoraRequest make_request(const toy::SplitPoint& site, const Matrix& x) {
    const auto layout = layout_for(site, x.rows());
    const auto packed = helinalg::pack_input(*ctx_, x, layout, keys_->eval, rng_);
    LoraRequest req;
    req.session_id = session_id_;
    req.t = ++t_;
    req.site = site;
    req.layout = layout;
    for (const auto& ct : packed.ciphertexts) req.ciphertexts.push_back(ckks::serialize(ct));
    return req;
  }

  /// Sends `req` in as many frames as the size cap requires.
  void send_request(LoraRequest req) {
    auto groups = chunk_blobs(std::move(req.ciphertexts), ciphertext_budget(opts_.max_frame));
    req.chunk_count = static_cast<std::uint32_t>(groups.size());
    for (std::uint32_t i = 0; i < groups.size(); ++i) {
      req.chunk_index = i;
      req.ciphertexts = std::move(groups[i]);
      ch_->send(MsgType::kLoraReq, encode(req));
      ++stats_.request_frames;
    }
  }

  /// Reads the response to round `t` and decrypts it: x A1 A2 + Q_t.
  Matrix read_response(std::uint64_t t, const helinalg::PackLayout& layout) {
    helinalg::PackedMatrix res;
    res.layout = layout;
    std::uint32_t count = 1;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto r = decode_response(expect_frame(*ch_, MsgType::kLoraResp).payload);
      ++stats_.response_frames;
      check_response(r, session_id_, t, i);
      count = r.chunk_count;
      for (const auto& b : r.ciphertexts) res.ciphertexts.push_back(ckks::deserialize_ciphertext(*ctx_, b));
    }
    if (res.ciphertexts.size() != layout.ct_count) throw ProtocolError("response ciphertext count mismatch");
    const std::size_t want = ctx_->max_level() - ckks::kRequiredDepth;
    for (const auto& ct : res.ciphertexts)
      if (ct.level != want) throw ProtocolError("response at level " + std::to_string(ct.level));
    res.level = want;
    res.scale = res.ciphertexts.front().scale;
    return helinalg::extract_result(*ctx_, res, keys_->secret);
  }

  /// Raw decrypted server output for one call.
  Matrix call_raw(const toy::SplitPoint& site, const Matrix& x) {
    if (x.cols() != model_.config.d_model) throw DimensionError("LoRA input must have d_model columns");
    if (opts_.rtt_ms > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(opts_.rtt_ms));
    auto req = make_request(site, x);
    const auto layout = req.layout;
    const auto t = req.t;
    send_request(std::move(req));
    Matrix out = read_response(t, layout);
    ++stats_.calls;
    return out;
  }

  /// LoRA bypass x A1 A2 with the PLL offset demodulated away.
  Matrix call(const toy::SplitPoint& site, const Matrix& x) {
    return toy::bypass_from_response(adapter(site), call_raw(site, x));
  }

  /// Serves toy forward passes; returns raw responses, which the forward
  /// pass demodulates itself.
  toy::LoraCall lora_call() {
    return [this](const toy::SplitPoint& p, const Matrix& x) { return call_raw(p, x); };
  }

  Matrix infer(std::span<const std::uint8_t> tokens) { return toy::forward(model_, tokens, lora_call()); }

  /// Sends BYE and waits for the server to hang up, so every frame sent
  /// earlier (key uploads included) has been processed on return.
  void close() {
    if (!ch_) return;
    try {
      ch_->send(MsgType::kBye);
      for (;;) ch_->recv();
    } catch (const Error&) {
    }
    ch_.reset();
  }

 private:
  const toy::LoraAdapter& adapter(const toy::SplitPoint& site) const {
    if (!model_.has_adapter(site)) throw ParameterError("no adapter at " + toy::to_string(site));
    return model_.adapter(site);
  }

  void handshake() {
    Hello h;
    if (opts_.keys) h.key_fp = opts_.keys->fingerprint();
    ch_->send(MsgType::kHello, encode(h));
    const auto pm = decode_params(expect_frame(*ch_, MsgType::kParams).payload);
    ctx_ = ckks::CkksContext::create(ckks::deserialize_params(pm.ckks_params));
    if (ctx_->max_level() < ckks::kRequiredDepth) throw ProtocolError("server parameters lack depth 3");
    session_id_ = pm.session_id;
    cache_hit_ = pm.cache_hit;
    steps_ = pm.rotation_steps;
    model_ = toy::deserialize_model(expect_frame(*ch_, MsgType::kModel).payload);

    if (opts_.keys && reusable(*opts_.keys)) {
      keys_ = opts_.keys;
    } else {
      if (cache_hit_) throw ProtocolError("server reported a cache hit for keys this client cannot use");
      keys_ = std::make_shared<const ckks::KeyMaterial>(ckks::keygen(*ctx_, steps_, rng_));
    }
    ch_->send(MsgType::kPubKey, ckks::serialize(keys_->eval.pk, ctx_->fingerprint()));
    if (!cache_hit_) {
      ch_->send(MsgType::kRotKeys, ckks::serialize(keys_->eval.rotations, ctx_->fingerprint(), ctx_->max_level()));
      rotkeys_uploaded_ = true;
    }
  }

  bool reusable(const ckks::KeyMaterial& k) const {
    if (k.eval.params_fp != ctx_->fingerprint()) return false;
    for (long long s : steps_)
      if (s != 0 && k.eval.find(*ctx_, s) == nullptr) return false;
    return true;
  }

  ClientOptions opts_;
  Rng rng_;
  std::optional<FrameChannel> ch_;
  std::shared_ptr<const ckks::CkksContext> ctx_;
  std::shared_ptr<const ckks::KeyMaterial> keys_;
  toy::ToyModel model_;
  std::vector<long long> steps_;
  std::uint64_t session_id_ = 0;
  std::uint64_t t_ = 0;
  bool cache_hit_ = false;
  bool rotkeys_uploaded_ = false;
  ClientStats stats_;
};

}  // namespace privlora::protocol
