// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef C2F_SAMPLING_HPP_
#define C2F_SAMPLING_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "c2f/model.hpp"

namespace c2f {

using Rng = std::mt19937_64;

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// softmax(logits / temperature) with the banned token forced to probability 0.
inline std::vector<double> token_probs(std::span<const double> logits, double temperature,
                                       std::optional<TokenId> banned = std::nullopt) {
  if (!(temperature > 0.0)) throw config_error("token_probs: temperature must be > 0");
  std::vector<double> p(logits.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (!(banned && static_cast<TokenId>(j) == *banned)) mx = std::max(mx, logits[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (banned && static_cast<TokenId>(j) == *banned) continue;
    p[j] = std::exp((logits[j] - mx) / temperature);
    z += p[j];
  }
  for (double& x : p) x /= z;
  return p;
}

// Temperature 0 is greedy (lowest id wins ties); otherwise inverse-CDF sampling.
inline TokenId sample_token(std::span<const double> logits, double temperature,
                            std::optional<TokenId> banned, Rng& rng) {
  if (temperature == 0.0) {
    TokenId best = -1;
    for (std::size_t j = 0; j < logits.size(); ++j) {
      if (banned && static_cast<TokenId>(j) == *banned) continue;
      if (best < 0 || logits[j] > logits[static_cast<std::size_t>(best)])
        best = static_cast<TokenId>(j);
    }
    return best;
  }
  auto p = token_probs(logits, temperature, banned);
  const double u = uniform01(rng);
  double acc = 0.0;
  TokenId last = -1;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0.0) continue;
    acc += p[j];
    last = static_cast<TokenId>(j);
    if (u < acc) return last;
  }
  return last;
}

struct SamplerOptions {
  std::size_t max_new_tokens = 32;
  double temperature = 1.0;
  bool suppress_eos = false;
};

struct Generation {
  TokenSequence tokens;     // includes the EOS when one was emitted
  bool terminated = false;  // ended on EOS rather than on the length limit
};

// Autoregressive continuation of `context`. With suppress_eos the EOS logit is
// treated as -infinity, so the response always has exactly max_new_tokens.
inline Generation generate(const ParameterSet& params, const ModelConfig& config,
                           std::span<const TokenId> context, const SamplerOptions& opts,
                           Rng& rng) {
  if (context.empty()) throw config_error("generate: empty context");
  if (opts.max_new_tokens == 0) throw config_error("generate: max_new_tokens must be >= 1");
  if (context.size() + opts.max_new_tokens > static_cast<std::size_t>(config.max_context)) {
    throw config_error("generate: context " + std::to_string(context.size()) + " + " +
                       std::to_string(opts.max_new_tokens) + " new tokens exceeds max_context");
  }
  const std::optional<TokenId> banned =
      opts.suppress_eos ? std::optional<TokenId>(config.eos_token_id) : std::nullopt;
  InferenceSession session(params, config);
  std::span<const double> logits;
  for (TokenId t : context) logits = session.step(t);
  Generation g;
  while (true) {
    const TokenId next = sample_token(logits, opts.temperature, banned, rng);
    g.tokens.push_back(next);
    if (!opts.suppress_eos && next == config.eos_token_id) {
      g.terminated = true;
      break;
    }
    if (g.tokens.size() == opts.max_new_tokens) break;
    logits = session.step(next);
  }
  return g;
}

}  // namespace c2f

#endif  // C2F_SAMPLING_HPP_
