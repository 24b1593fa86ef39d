// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "c2f/model.hpp"
#include "c2f/sampling.hpp"
#include "test_util.hpp"

namespace c2f {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 12;
  c.max_context = 10;
  c.system_prefix_ids = {3, 4};
  return c;
}

// Larger-than-default init so the finite-difference signal is not tiny.
ParameterSet noisy_params(const ModelConfig& c, std::uint64_t seed) {
  ParameterSet p = init_params(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& e : p)
    for (double& x : e.tensor.data) x += n(rng);
  return p;
}

TEST(ModelConfig, RejectsInvalid) {
  ModelConfig c = desk_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = desk_config();
  c.pad_token_id = c.eos_token_id;
  EXPECT_THROW(c.validate(), Error);
  c = desk_config();
  c.system_prefix_ids = {64};
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(desk_config().validate());
  EXPECT_NO_THROW(text_config().validate());
}

TEST(InitParams, SameSeedIsBitIdentical) {
  EXPECT_TRUE(bit_equal(init_params(desk_config(), 7), init_params(desk_config(), 7)));
}

TEST(InitParams, DifferentSeedsDiffer) {
  EXPECT_FALSE(bit_equal(init_params(desk_config(), 7), init_params(desk_config(), 8)));
}

TEST(InitParams, ElementCountMatchesHandCount) {
  // V=8, C=6, d=4, f=8, one layer:
  //   tok 32 + pos 24
  //   layer: 4 + 48 + 12 + 16 + 4 + 4 + 32 + 8 + 32 + 4 = 164
  //   final_norm 4 + lm_head 32
  ModelConfig c;
  c.vocab_size = 8;
  c.max_context = 6;
  c.d_model = 4;
  c.d_ff = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  EXPECT_EQ(init_params(c, 1).numel(), 256u);
  EXPECT_EQ(expected_param_count(c), 256u);
  EXPECT_EQ(init_params(desk_config(), 1).numel(), expected_param_count(desk_config()));
}

TEST(ParameterSet, ManifestDependsOnlyOnConfig) {
  EXPECT_EQ(init_params(desk_config(), 1).manifest(), init_params(desk_config(), 99).manifest());
}

TEST(ParameterSet, FlattenUnflattenIsBitExact) {
  std::mt19937_64 rng(4);
  const ParameterSet base = init_params(tiny_config(), 2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(base.numel());
    std::uniform_int_distribution<std::uint64_t> bits;
    for (double& x : v) {
      // Arbitrary finite bit patterns, including subnormals and -0.0.
      do { x = std::bit_cast<double>(bits(rng)); } while (!std::isfinite(x));
    }
    ParameterSet p = ParameterSet::from_flat(base.manifest(), v);
    EXPECT_TRUE(bit_equal(p.flatten(), v));
  }
}

TEST(ParameterSet, DuplicateNameRejected) {
  ParameterSet p;
  p.add("a", Tensor({1}));
  EXPECT_THROW(p.add("a", Tensor({1})), Error);
}

TEST(ForwardLogits, IsCausal) {
  const ModelConfig c = tiny_config();
  const ParameterSet p = noisy_params(c, 3);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    TokenSequence seq(8);
    for (auto& t : seq) t = static_cast<TokenId>(rng() % c.vocab_size);
    const Tensor base = forward_logits(p, c, seq);
    const std::size_t j = rng() % seq.size();
    TokenSequence changed = seq;
    changed[j] = (changed[j] + 1) % c.vocab_size;
    const Tensor pert = forward_logits(p, c, changed);
    for (std::size_t i = 0; i < j; ++i)
      for (int v = 0; v < c.vocab_size; ++v) ASSERT_EQ(base.at(i, v), pert.at(i, v));
    bool changed_at_j = false;
    for (int v = 0; v < c.vocab_size; ++v) changed_at_j |= base.at(j, v) != pert.at(j, v);
    EXPECT_TRUE(changed_at_j);
  }
}

TEST(ForwardLogits, Deterministic) {
  const ModelConfig c = tiny_config();
  const ParameterSet p = noisy_params(c, 3);
  TokenSequence seq{1, 5, 7, 2};
  EXPECT_TRUE(bit_equal(forward_logits(p, c, seq), forward_logits(p, c, seq)));
}

TEST(ForwardLogits, OverLengthThrows) {
  const ModelConfig c = tiny_config();
  TokenSequence seq(c.max_context + 1, 5);
  EXPECT_THROW(forward_logits(init_params(c, 1), c, seq), Error);
}

TEST(ForwardLogits, EmbeddingGradientMatchesFiniteDifferences) {
  const ModelConfig c = tiny_config();
  ParameterSet p = noisy_params(c, 5);
  TokenSequence seq{4, 9, 4, 1, 7};
  std::mt19937_64 rng(6);
  Tensor w = testing::random_tensor({seq.size(), static_cast<std::size_t>(c.vocab_size)}, rng);
  ParameterSet grads = p.zeros_like();
  {
    Tape tape;
    BoundParams b(tape, p, true);
    Var loss = sum(mul(forward(b, c, seq).logits, tape.constant(w)));
    tape.backward(loss);
    b.accumulate_grads(tape, grads);
  }
  auto loss = [&] {
    Tensor l = forward_logits(p, c, seq);
    double s = 0.0;
    for (std::size_t i = 0; i < l.numel(); ++i) s += l.data[i] * w.data[i];
    return s;
  };
  // Only the embedding tables.
  ParameterSet emb;
  emb.add("tok_emb", p.at("tok_emb"));
  emb.add("pos_emb", p.at("pos_emb"));
  ParameterSet emb_grads;
  emb_grads.add("tok_emb", grads.at("tok_emb"));
  emb_grads.add("pos_emb", grads.at("pos_emb"));
  auto emb_loss = [&] {
    p.at("tok_emb") = emb.at("tok_emb");
    p.at("pos_emb") = emb.at("pos_emb");
    return loss();
  };
  auto r = testing::fd_check_params(emb, emb_grads, emb_loss);
  EXPECT_LT(r.worst, 1e-4) << r.where;
}

TEST(ForwardLogits, AllParameterGradientsMatchFiniteDifferences) {
  const ModelConfig c = tiny_config();
  ParameterSet p = noisy_params(c, 12);
  TokenSequence seq{4, 9, 4, 1, 7, 2};
  std::vector<int> targets{9, 4, 1, 7, 2, 0};
  ParameterSet grads = p.zeros_like();
  {
    Tape tape;
    BoundParams b(tape, p, true);
    tape.backward(softmax_cross_entropy(forward(b, c, seq).logits, targets));
    b.accumulate_grads(tape, grads);
  }
  auto loss = [&] {
    Tape tape;
    BoundParams b(tape, p, false);
    return tape.scalar(softmax_cross_entropy(forward(b, c, seq).logits, targets));
  };
  auto r = testing::fd_check_params(p, grads, loss);
  EXPECT_LT(r.worst, 1e-4) << r.where;
  EXPECT_EQ(r.checked, p.numel());
}

TEST(ForwardValue, ZeroHeadGivesZeros) {
  const ModelConfig c = tiny_config();
  TokenSequence seq{1, 2, 3, 4};
  for (double v : forward_value(noisy_params(c, 1), init_scalar_head(c), c, seq))
    EXPECT_EQ(v, 0.0);
}

TEST(ForwardValue, IsCausalAndMatchesFiniteDifferences) {
  const ModelConfig c = tiny_config();
  ParameterSet p = noisy_params(c, 2);
  ParameterSet head = init_scalar_head(c);
  std::mt19937_64 rng(2);
  for (auto& e : head)
    for (double& x : e.tensor.data) x = testing::random_tensor({1}, rng).data[0];
  TokenSequence seq{5, 6, 7, 8, 9};
  auto v1 = forward_value(p, head, c, seq);
  TokenSequence changed = seq;
  changed[3] = 0;
  auto v2 = forward_value(p, head, c, changed);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(v1[i], v2[i]);

  std::vector<double> target{0.5, -0.5, 1.0, 0.0, 2.0};
  ParameterSet gb = p.zeros_like(), gh = head.zeros_like();
  {
    Tape tape;
    BoundParams b(tape, p, true);
    BoundParams h(tape, head, true);
    tape.backward(half_mse(apply_scalar_head(h, forward(b, c, seq, false).hidden), target));
    b.accumulate_grads(tape, gb);
    h.accumulate_grads(tape, gh);
  }
  auto loss = [&] {
    auto v = forward_value(p, head, c, seq);
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (target[i] - v[i]) * (target[i] - v[i]);
    return 0.5 * s / static_cast<double>(v.size());
  };
  auto rb = testing::fd_check_params(p, gb, loss);
  auto rh = testing::fd_check_params(head, gh, loss);
  EXPECT_LT(rb.worst, 1e-4) << rb.where;
  EXPECT_LT(rh.worst, 1e-4) << rh.where;
}

TEST(InferenceSession, MatchesTapeForward) {
  const ModelConfig c = tiny_config();
  const ParameterSet p = noisy_params(c, 21);
  TokenSequence seq{3, 4, 11, 0, 5, 5, 6, 1, 2, 10};
  const Tensor full = forward_logits(p, c, seq);
  const Tensor hidden = forward_hidden(p, c, seq);
  InferenceSession s(p, c);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    auto logits = s.step(seq[i]);
    for (int v = 0; v < c.vocab_size; ++v) EXPECT_NEAR(logits[v], full.at(i, v), 1e-12);
    for (int j = 0; j < c.d_model; ++j) EXPECT_NEAR(s.hidden()[j], hidden.at(i, j), 1e-12);
  }
  EXPECT_THROW(s.step(1), Error);  // context exhausted
}

TEST(Sampling, SuppressionPicksBestNonEos) {
  std::vector<double> logits{0.1, 5.0, 2.0, 1.0};  // EOS (id 1) is the argmax
  Rng rng(1);
  EXPECT_EQ(sample_token(logits, 0.0, TokenId{1}, rng), 2);
  EXPECT_EQ(sample_token(logits, 0.0, std::nullopt, rng), 1);
  auto p = token_probs(logits, 1.0, TokenId{1});
  EXPECT_EQ(p[1], 0.0);
  double s = 0.0;
  for (double x : p) s += x;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Sampling, GenerateRespectsLimits) {
  const ModelConfig c = tiny_config();
  const ParameterSet p = noisy_params(c, 4);
  Rng rng(3);
  TokenSequence ctx{3, 4};
  auto g = generate(p, c, ctx, {.max_new_tokens = 8, .temperature = 1.0, .suppress_eos = true}, rng);
  EXPECT_EQ(g.tokens.size(), 8u);
  EXPECT_FALSE(g.terminated);
  for (TokenId t : g.tokens) EXPECT_NE(t, c.eos_token_id);
  EXPECT_THROW(generate(p, c, ctx, {.max_new_tokens = 9}, rng), Error);
}

}  // namespace
}  // namespace c2f
