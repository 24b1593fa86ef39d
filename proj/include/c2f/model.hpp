// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tiny decoder-only transformer: learned token and position embeddings,
// pre-norm (RMS) blocks with causal multi-head attention and a SiLU MLP,
// a final RMS norm and an untied LM head. A scalar head (value or reward)
// lives in its own ParameterSet so policy checkpoints stay mergeable.
//
// Canonical parameter order (row-major, [in x out] for weights):
//   tok_emb [V x d], pos_emb [C x d],
//   per layer l: layers.l.{attn_norm [d], w_qkv [d x 3d], b_qkv [3d],
//                          w_o [d x d], b_o [d], mlp_norm [d],
//                          w_up [d x f], b_up [f], w_down [f x d], b_down [d]},
//   final_norm [d], lm_head [d x V].

#ifndef C2F_MODEL_HPP_
#define C2F_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "c2f/error.hpp"
#include "c2f/params.hpp"
#include "c2f/tensor.hpp"
#include "c2f/vocab.hpp"

namespace c2f {

struct ModelConfig {
  int vocab_size = synthetic::kVocabSize;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  int max_context = 128;
  TokenId eos_token_id = synthetic::kEos;
  TokenId pad_token_id = synthetic::kPad;
  TokenId sep_token_id = synthetic::kSep;
  TokenSequence system_prefix_ids = synthetic::system_prefix();

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw config_error(std::string("model config: ") + name + " must be > 0");
    };
    positive(vocab_size, "vocab_size");
    positive(d_model, "d_model");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_ff, "d_ff");
    positive(max_context, "max_context");
    if (d_model % n_heads != 0)
      throw config_error("model config: d_model must be divisible by n_heads");
    if (eos_token_id == pad_token_id)
      throw config_error("model config: eos_token_id must differ from pad_token_id");
    auto reserved = [&](TokenId t, const char* name) {
      if (t < 0 || t >= vocab_size)
        throw config_error(std::string("model config: ") + name + " outside vocabulary");
    };
    reserved(eos_token_id, "eos_token_id");
    reserved(pad_token_id, "pad_token_id");
    reserved(sep_token_id, "sep_token_id");
    for (TokenId t : system_prefix_ids) reserved(t, "system_prefix_ids");
  }
};

// Desk default: vocab 64, d 64, 2 layers, 2 heads, d_ff 128, context 128.
inline ModelConfig desk_config() { return ModelConfig{}; }

// Byte-level text mode; the context must hold the verbatim system prompt.
inline ModelConfig text_config() {
  ModelConfig c;
  c.vocab_size = text::kVocabSize;
  c.max_context = 512;
  c.eos_token_id = text::kEos;
  c.pad_token_id = text::kPad;
  c.sep_token_id = text::kSep;
  c.system_prefix_ids.assign(kSystemPrompt.begin(), kSystemPrompt.end());
  for (auto& t : c.system_prefix_ids) t = static_cast<unsigned char>(t);
  return c;
}

inline constexpr double kInitStd = 0.02;
inline constexpr int kTensorsPerLayer = 10;

inline std::size_t expected_param_count(const ModelConfig& c) {
  const std::size_t V = c.vocab_size, d = c.d_model, C = c.max_context, f = c.d_ff;
  const std::size_t per_layer = d + d * 3 * d + 3 * d + d * d + d + d + d * f + f + f * d + d;
  return V * d + C * d + c.n_layers * per_layer + d + d * V;
}

// Position of each tensor in the canonical order.
struct ParamIndex {
  static constexpr std::size_t kTokEmb = 0;
  static constexpr std::size_t kPosEmb = 1;
  static std::size_t layer(int l, int k) { return 2 + l * kTensorsPerLayer + k; }
  enum LayerTensor { kAttnNorm, kWqkv, kBqkv, kWo, kBo, kMlpNorm, kWup, kBup, kWdown, kBdown };
  static std::size_t final_norm(const ModelConfig& c) { return 2 + c.n_layers * kTensorsPerLayer; }
  static std::size_t lm_head(const ModelConfig& c) { return final_norm(c) + 1; }
};

// Deterministic in `seed`: matrices and embeddings ~ N(0, 0.02^2), biases 0,
// norm gains 1.
inline ParameterSet init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  const std::size_t V = c.vocab_size, d = c.d_model, C = c.max_context, f = c.d_ff;
  auto randn = [&](Shape s) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = normal(rng);
    return t;
  };
  auto ones = [](std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0)); };
  ParameterSet p;
  p.add("tok_emb", randn({V, d}));
  p.add("pos_emb", randn({C, d}));
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    p.add(pre + "attn_norm", ones(d));
    p.add(pre + "w_qkv", randn({d, 3 * d}));
    p.add(pre + "b_qkv", Tensor({3 * d}));
    p.add(pre + "w_o", randn({d, d}));
    p.add(pre + "b_o", Tensor({d}));
    p.add(pre + "mlp_norm", ones(d));
    p.add(pre + "w_up", randn({d, f}));
    p.add(pre + "b_up", Tensor({f}));
    p.add(pre + "w_down", randn({f, d}));
    p.add(pre + "b_down", Tensor({d}));
  }
  p.add("final_norm", ones(d));
  p.add("lm_head", randn({d, V}));
  return p;
}

// Zero-initialised scalar head: value = hidden . w + b.
inline ParameterSet init_scalar_head(const ModelConfig& c, const std::string& prefix = "head") {
  ParameterSet h;
  h.add(prefix + ".w", Tensor({static_cast<std::size_t>(c.d_model), 1}));
  h.add(prefix + ".b", Tensor({1}));
  return h;
}

inline void check_sequence(const ModelConfig& c, std::span<const TokenId> ids) {
  if (ids.empty()) throw config_error("model: empty sequence");
  if (ids.size() > static_cast<std::size_t>(c.max_context)) {
    throw config_error("model: sequence length " + std::to_string(ids.size()) +
                       " exceeds max_context " + std::to_string(c.max_context));
  }
  for (TokenId t : ids)
    if (t < 0 || t >= c.vocab_size)
      throw config_error("model: token id " + std::to_string(t) + " outside vocabulary");
}

struct ForwardVars {
  Var hidden;  // final-normed hidden states [len x d]
  Var logits;  // [len x V], unset when not requested
};

// Records the forward pass on `tape`.
inline ForwardVars forward(const BoundParams& p, const ModelConfig& c,
                           std::span<const TokenId> ids, bool with_logits = true) {
  check_sequence(c, ids);
  const std::size_t len = ids.size();
  Var x = embedding(p[ParamIndex::kTokEmb], ids);
  std::vector<int> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);
  x = add(x, embedding(p[ParamIndex::kPosEmb], positions));
  using PI = ParamIndex;
  for (int l = 0; l < c.n_layers; ++l) {
    Var h = rms_norm(x, p[PI::layer(l, PI::kAttnNorm)]);
    Var qkv = add_bias(matmul(h, p[PI::layer(l, PI::kWqkv)]), p[PI::layer(l, PI::kBqkv)]);
    Var att = causal_attention(qkv, static_cast<std::size_t>(c.n_heads));
    x = add(x, add_bias(matmul(att, p[PI::layer(l, PI::kWo)]), p[PI::layer(l, PI::kBo)]));
    Var h2 = rms_norm(x, p[PI::layer(l, PI::kMlpNorm)]);
    Var up = silu(add_bias(matmul(h2, p[PI::layer(l, PI::kWup)]), p[PI::layer(l, PI::kBup)]));
    x = add(x, add_bias(matmul(up, p[PI::layer(l, PI::kWdown)]), p[PI::layer(l, PI::kBdown)]));
  }
  ForwardVars out;
  out.hidden = rms_norm(x, p[PI::final_norm(c)]);
  if (with_logits) out.logits = matmul(out.hidden, p[PI::lm_head(c)]);
  return out;
}

// Scalar head over every row of `hidden`: [len x 1].
inline Var apply_scalar_head(const BoundParams& head, Var hidden) {
  return add_bias(matmul(hidden, head[0]), head[1]);
}

inline Tensor forward_logits(const ParameterSet& params, const ModelConfig& c,
                             std::span<const TokenId> ids) {
  Tape tape;
  BoundParams p(tape, params, false);
  return tape.tensor(forward(p, c, ids).logits);
}

inline Tensor forward_hidden(const ParameterSet& params, const ModelConfig& c,
                             std::span<const TokenId> ids) {
  Tape tape;
  BoundParams p(tape, params, false);
  return tape.tensor(forward(p, c, ids, false).hidden);
}

// One scalar per position from `head` applied to the backbone's hidden state.
inline std::vector<double> forward_value(const ParameterSet& backbone,
                                         const ParameterSet& head,
                                         const ModelConfig& c,
                                         std::span<const TokenId> ids) {
  Tape tape;
  BoundParams p(tape, backbone, false);
  BoundParams h(tape, head, false);
  Var v = apply_scalar_head(h, forward(p, c, ids, false).hidden);
  auto vals = tape.value(v);
  return {vals.begin(), vals.end()};
}

// Incremental decoder with a per-layer key/value cache. Computes the same
// function as `forward` one position at a time, without a tape.
class InferenceSession {
 public:
  InferenceSession(const ParameterSet& params, const ModelConfig& c)
      : p_(params), c_(c), d_(c.d_model), f_(c.d_ff), hd_(c.d_model / c.n_heads) {
    if (params.manifest().size() < ParamIndex::lm_head(c) + 1)
      throw config_error("inference: parameter set does not match config");
    keys_.assign(c.n_layers, {});
    values_.assign(c.n_layers, {});
    x_.resize(d_);
    h_.resize(d_);
    qkv_.resize(3 * d_);
    att_.resize(d_);
    up_.resize(f_);
    hidden_.resize(d_);
    logits_.resize(c.vocab_size);
  }

  std::size_t length() const { return len_; }

  // Appends `token` and returns the logits predicting the next token.
  std::span<const double> step(TokenId token) {
    if (len_ >= static_cast<std::size_t>(c_.max_context))
      throw config_error("inference: context exhausted");
    if (token < 0 || token >= c_.vocab_size)
      throw config_error("inference: token outside vocabulary");
    using PI = ParamIndex;
    const auto& tok = p_[PI::kTokEmb].tensor.data;
    const auto& pos = p_[PI::kPosEmb].tensor.data;
    for (std::size_t j = 0; j < d_; ++j)
      x_[j] = tok[static_cast<std::size_t>(token) * d_ + j] + pos[len_ * d_ + j];
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd_));
    std::vector<double> tmp(d_);
    for (int l = 0; l < c_.n_layers; ++l) {
      rms(x_, p_[PI::layer(l, PI::kAttnNorm)].tensor.data, h_);
      affine(h_, p_[PI::layer(l, PI::kWqkv)].tensor.data, p_[PI::layer(l, PI::kBqkv)].tensor.data, qkv_);
      auto& K = keys_[l];
      auto& Vc = values_[l];
      K.insert(K.end(), qkv_.begin() + d_, qkv_.begin() + 2 * d_);
      Vc.insert(Vc.end(), qkv_.begin() + 2 * d_, qkv_.end());
      const std::size_t n = len_ + 1;
      std::vector<double> scores(n);
      std::fill(att_.begin(), att_.end(), 0.0);
      for (int h = 0; h < c_.n_heads; ++h) {
        const std::size_t off = h * hd_;
        const double* q = qkv_.data() + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const double* k = K.data() + j * d_ + off;
          double dot = 0.0;
          for (std::size_t e = 0; e < hd_; ++e) dot += q[e] * k[e];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double pj = scores[j] / z;
          const double* v = Vc.data() + j * d_ + off;
          for (std::size_t e = 0; e < hd_; ++e) att_[off + e] += pj * v[e];
        }
      }
      affine(att_, p_[PI::layer(l, PI::kWo)].tensor.data, p_[PI::layer(l, PI::kBo)].tensor.data, tmp);
      for (std::size_t j = 0; j < d_; ++j) x_[j] += tmp[j];
      rms(x_, p_[PI::layer(l, PI::kMlpNorm)].tensor.data, h_);
      affine(h_, p_[PI::layer(l, PI::kWup)].tensor.data, p_[PI::layer(l, PI::kBup)].tensor.data, up_);
      for (double& u : up_) u = u * sigmoid(u);
      affine(up_, p_[PI::layer(l, PI::kWdown)].tensor.data, p_[PI::layer(l, PI::kBdown)].tensor.data, tmp);
      for (std::size_t j = 0; j < d_; ++j) x_[j] += tmp[j];
    }
    rms(x_, p_[PI::final_norm(c_)].tensor.data, hidden_);
    const auto& head = p_[PI::lm_head(c_)].tensor.data;
    const std::size_t V = c_.vocab_size;
    std::fill(logits_.begin(), logits_.end(), 0.0);
    for (std::size_t i = 0; i < d_; ++i) {
      const double a = hidden_[i];
      const double* row = head.data() + i * V;
      for (std::size_t j = 0; j < V; ++j) logits_[j] += a * row[j];
    }
    ++len_;
    return logits_;
  }

  std::span<const double> logits() const { return logits_; }
  std::span<const double> hidden() const { return hidden_; }

 private:
  static void rms(const std::vector<double>& x, const std::vector<double>& g,
                  std::vector<double>& out) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-5);
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] * r * g[j];
  }

  // out = x * W + b for W [in x out].
  static void affine(const std::vector<double>& x, const std::vector<double>& W,
                     const std::vector<double>& b, std::vector<double>& out) {
    const std::size_t n = out.size();
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = x[i];
      const double* row = W.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += a * row[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] += b[j];
  }

  const ParameterSet& p_;
  ModelConfig c_;
  std::size_t d_, f_, hd_;
  std::size_t len_ = 0;
  std::vector<std::vector<double>> keys_, values_;
  std::vector<double> x_, h_, qkv_, att_, up_, hidden_, logits_;
};

}  // namespace c2f

#endif  // C2F_MODEL_HPP_
